"""Dense-tensor arithmetic with reverse-mode differentiation.

A small tape-based engine over numpy arrays: each operation records its
parents and a closure that scatters the output gradient back onto them.
Training code runs in float32; gradient checking against finite differences
runs the same graphs in float64 (finite differences are not trustworthy in
float32).

Only what the package needs is implemented: matmul, broadcasting add/mul,
embedding lookup, reshape/transpose/slicing, layer norm, gelu, sigmoid,
softmax, mask fill, cross entropy, reductions, nearest upsampling and 2-d
convolution.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Optional

import numpy as np


class TensorError(ValueError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction (inference paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def param(cls, data) -> "Tensor":
        return cls(np.asarray(data), requires_grad=True)

    @classmethod
    def _from_op(cls, data, parents: Iterable["Tensor"], backward) -> "Tensor":
        out = cls(data)
        parents = tuple(p for p in parents if isinstance(p, Tensor))
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    # -- bookkeeping -----------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, grad: np.ndarray, owned: bool = False) -> None:
        # owned=True hands over a freshly computed array; pass-through or view
        # gradients must be copied so parents never alias a child's buffer.
        if self.grad is None:
            self.grad = grad if owned else np.array(grad)
        else:
            np.add(self.grad, grad, out=self.grad)

    def backward(self, seed: Optional[np.ndarray] = None) -> None:
        if seed is None:
            if self.data.size != 1:
                raise TensorError("backward() without seed requires a scalar output")
            seed = np.ones_like(self.data)
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self._accumulate(np.asarray(seed, dtype=self.data.dtype))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _require_same_trailing(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise TensorError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_trailing("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _require_same_trailing("mul", a, b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape), owned=True)

    return Tensor._from_op(out_data, (a, b), backward)


def square(a) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data * a.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(2.0 * a.data * g, owned=True)

    return Tensor._from_op(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                        np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data), owned=True)

    return Tensor._from_op(out_data, (a,), backward)


_GELU_K = 0.7978845608028654  # sqrt(2 / pi)
_GELU_C = 0.044715


def gelu(a) -> Tensor:
    """Gaussian error linear unit (tanh approximation)."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_K * (x + _GELU_C * x2 * x))
    out_data = 0.5 * x * (1.0 + t)

    def backward(g):
        if a.requires_grad:
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_K * (1.0 + 3.0 * _GELU_C * x2)
            d *= g
            a._accumulate(d, owned=True)

    return Tensor._from_op(out_data, (a,), backward)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0), owned=True)

    return Tensor._from_op(out_data, (a,), backward)


# -- shape ops --------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    out_data = a.data.transpose(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.transpose(inv))

    return Tensor._from_op(out_data, (a,), backward)


def take(a, key) -> Tensor:
    """Numpy-style indexing; gradients scatter-add for repeated indices."""
    a = _as_tensor(a)
    out_data = a.data[key]
    fancy = isinstance(key, np.ndarray) or (
        isinstance(key, tuple) and any(isinstance(k, np.ndarray) for k in key)
    )

    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            if fancy:
                np.add.at(buf, key, g)
            else:
                buf[key] += g
            a._accumulate(buf, owned=True)

    return Tensor._from_op(out_data, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor._from_op(out_data, tensors, backward)


# -- reductions ----------------------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).copy(), owned=True)
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.shape).copy(), owned=True)

    return Tensor._from_op(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra -------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.shape), owned=True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.shape), owned=True)

    return Tensor._from_op(out_data, (a, b), backward)


def embedding(table, idx) -> Tensor:
    """Row lookup z -> table[z]; gradients scatter-add into the table."""
    table = _as_tensor(table)
    idx = np.asarray(idx)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise TensorError(
            f"embedding: index out of range for table of {table.shape[0]} rows"
        )
    out_data = table.data[idx]

    def backward(g):
        if table.requires_grad:
            buf = np.zeros_like(table.data)
            np.add.at(buf, idx.ravel(), g.reshape(-1, table.shape[1]))
            table._accumulate(buf, owned=True)

    return Tensor._from_op(out_data, (table,), backward)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise TensorError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} do not match width {x.shape[-1]}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data
    n = x.shape[-1]

    def backward(g):
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, n).sum(axis=0), owned=True)
        if gain.requires_grad:
            gain._accumulate((g * xhat).reshape(-1, n).sum(axis=0), owned=True)
        if x.requires_grad:
            gx_hat = g * gain.data
            term1 = gx_hat.mean(axis=-1, keepdims=True)
            term2 = (gx_hat * xhat).mean(axis=-1, keepdims=True)
            x._accumulate(inv * (gx_hat - term1 - xhat * term2), owned=True)

    return Tensor._from_op(out_data, (x, gain, bias), backward)


def softmax(x, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along an axis."""
    x = _as_tensor(x)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=axis, keepdims=True)
    out_data = shifted

    def backward(g):
        if x.requires_grad:
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            x._accumulate(out_data * (g - dot), owned=True)

    return Tensor._from_op(out_data, (x,), backward)


def mask_fill(x, mask, value: float) -> Tensor:
    """Replace entries where mask is True; no gradient flows to them."""
    x = _as_tensor(x)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, np.asarray(value, dtype=x.dtype), x.data)

    def backward(g):
        if x.requires_grad:
            x._accumulate(_unbroadcast(np.where(mask, 0.0, g), x.shape), owned=True)

    return Tensor._from_op(out_data, (x,), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean cross-entropy of integer targets under rows of logits."""
    logits = _as_tensor(logits)
    targets = np.asarray(targets).reshape(-1)
    if logits.ndim != 2 or targets.shape[0] != logits.shape[0]:
        raise TensorError(
            f"cross_entropy: logits {logits.shape} vs {targets.shape[0]} targets"
        )
    if targets.size and (targets.min() < 0 or targets.max() >= logits.shape[1]):
        raise TensorError(
            f"cross_entropy: target index out of range for vocab {logits.shape[1]}"
        )
    rows = np.arange(logits.shape[0])
    m = logits.data.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits.data - m).sum(axis=1))
    out_data = np.asarray((lse - logits.data[rows, targets]).mean(), dtype=logits.dtype)

    def backward(g):
        if logits.requires_grad:
            p = np.exp(logits.data - m)
            p /= p.sum(axis=1, keepdims=True)
            p[rows, targets] -= 1.0
            logits._accumulate(g * p / logits.shape[0], owned=True)

    return Tensor._from_op(out_data, (logits,), backward)


# -- image ops -----------------------------------------------------------------------


def conv2d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution (cross-correlation) over [B, C, H, W] inputs."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise TensorError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    b_, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    hp, wp = h + 2 * padding, wd + 2 * padding
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]  # [B, C, ho, wo, kh, kw]
    ho, wo = windows.shape[2], windows.shape[3]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        b_, ho * wo, c * kh * kw
    )
    wmat = w.data.reshape(o, -1)
    out = cols @ wmat.T  # [B, ho*wo, O]
    if bias is not None:
        bias = _as_tensor(bias)
        out = out + bias.data
    out_data = np.ascontiguousarray(out.transpose(0, 2, 1)).reshape(b_, o, ho, wo)
    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        k_ = c * kh * kw
        gmat = np.ascontiguousarray(g.reshape(b_, o, -1).transpose(0, 2, 1))  # [B, P, O]
        if bias is not None and bias.requires_grad:
            bias._accumulate(gmat.sum(axis=(0, 1)), owned=True)
        if w.requires_grad:
            gw = gmat.reshape(-1, o).T @ cols.reshape(-1, k_)
            w._accumulate(gw.reshape(w.shape), owned=True)
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(b_, ho, wo, c, kh, kw)
            gxp = np.zeros((b_, c, hp, wp), dtype=x.dtype)
            # col2im by kernel-tap shifts; overlapping taps accumulate via +=
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += (
                        gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                    )
            if padding:
                gxp = gxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(np.ascontiguousarray(gxp), owned=True)

    return Tensor._from_op(out_data, parents, backward)


def block_scatter(values, spans, out_rows: int, out_cols: int) -> Tensor:
    """Place value blocks into a zero [B, out_rows, out_cols] matrix.

    values: [B, P, bh, bw]; spans: per-block (r0, rlen, c0, clen) regions,
    which must be disjoint.  Block p contributes its top-left rlen x clen
    corner at (r0, c0).  Used to lay attention-bias blocks into score space.
    """
    values = _as_tensor(values)
    if values.ndim != 4 or len(spans) != values.shape[1]:
        raise TensorError(
            f"block_scatter: values {values.shape} do not match {len(spans)} spans"
        )
    b_ = values.shape[0]
    out_data = np.zeros((b_, out_rows, out_cols), dtype=values.dtype)
    for p, (r0, rlen, c0, clen) in enumerate(spans):
        out_data[:, r0 : r0 + rlen, c0 : c0 + clen] = values.data[:, p, :rlen, :clen]

    def backward(g):
        if values.requires_grad:
            gv = np.zeros_like(values.data)
            for p, (r0, rlen, c0, clen) in enumerate(spans):
                gv[:, p, :rlen, :clen] = g[:, r0 : r0 + rlen, c0 : c0 + clen]
            values._accumulate(gv, owned=True)

    return Tensor._from_op(out_data, (values,), backward)


def upsample_nearest(x, factor: int) -> Tensor:
    """Nearest-neighbor upsampling of [B, C, H, W] by an integer factor."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise TensorError(f"upsample_nearest: expected 4-d input, got {x.shape}")
    out_data = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    b_, c, h, w = x.shape

    def backward(g):
        if x.requires_grad:
            x._accumulate(g.reshape(b_, c, h, factor, w, factor).sum(axis=(3, 5)), owned=True)

    return Tensor._from_op(out_data, (x,), backward)
