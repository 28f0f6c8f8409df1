"""Parameter registry, AdamW, and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

BETA1 = 0.9
BETA2 = 0.95
EPS = 1e-8


class OptimError(RuntimeError):
    pass


class ParamStore:
    """Named parameters plus AdamW moment buffers and a step counter.

    Weight decay applies only to parameters registered with decay=True
    (matmul/conv weights); biases, norm gains, and embedding tables are
    registered without it.
    """

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.decay_flags: dict[str, bool] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray, decay: bool = False) -> Tensor:
        if name in self.params:
            raise OptimError(f"duplicate parameter name: {name}")
        t = Tensor.param(np.asarray(data))
        self.params[name] = t
        self.decay_flags[name] = decay
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def n_params(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Everything that must round-trip through a checkpoint."""
        out = {}
        for name, t in self.params.items():
            out[name] = t.data
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        for name, t in self.params.items():
            t.data = arrays[name]
            self.m[name] = arrays[f"adam_m/{name}"]
            self.v[name] = arrays[f"adam_v/{name}"]
        self.step_count = step


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for t in store.params.values():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def adamw_step(
    store: ParamStore,
    lr: float,
    weight_decay: float = 0.01,
    clip_norm: float | None = None,
) -> None:
    """One decoupled-weight-decay Adam update over all parameters with grads."""
    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(store)
        if norm > clip_norm:
            scale = clip_norm / (norm + 1e-12)
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    for name, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise OptimError(f"non-finite gradient in {name}")
        if scale != 1.0:
            g = g * scale
        m = store.m[name]
        v = store.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        update = mhat / (np.sqrt(vhat) + EPS)
        if weight_decay and store.decay_flags[name]:
            update = update + weight_decay * p.data
        p.data = p.data - lr * update


def cosine_lr(step: int, total_steps: int, initial_rate: float) -> float:
    """Cosine decay from the initial rate to zero, no warmup."""
    if step < 0:
        raise OptimError("negative step")
    if step >= total_steps:
        return 0.0
    return 0.5 * initial_rate * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass(frozen=True)
class LrSchedule:
    initial_rate: float
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1 or self.initial_rate < 0:
            raise OptimError("schedule needs positive length and non-negative rate")

    def rate(self, step: int) -> float:
        return cosine_lr(step, self.total_steps, self.initial_rate)
