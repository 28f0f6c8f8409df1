"""Autoregressive decoding: next-token distributions, per-frame beam search,
and the sliding-window rollout that turns one image plus a camera path into a
frame sequence.

Frames are decoded one token at a time.  Within a frame, beam search keeps
the k highest cumulative-log-probability prefixes, expanding each beam by its
top k continuations; the returned grid is the best fully decoded sequence
(ties broken toward the lexicographically smallest token sequence).  Across
frames, a window of the last L-1 frames (real or generated) conditions the
next frame, with cameras re-canonicalized to the window's first pose, so the
camera distribution at inference matches training.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import tensor as T
from .transformer import SceneTransformer, clip_camera_features, frame_pairs


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class RolloutConfig:
    total_steps: int = 8       # trajectory length T, first frame included
    beam_width: int = 3
    temperature: float = 1.0
    seed: int = 0
    top_k: int | None = None   # enables stochastic per-token sampling

    def __post_init__(self):
        if self.total_steps < 2:
            raise SamplerError("rollout needs at least 2 poses")
        if self.beam_width < 1:
            raise SamplerError("beam width must be >= 1")


def log_softmax(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if temperature != 1.0:
        x = x / temperature
    x = x - x.max(axis=-1, keepdims=True)
    return x - np.log(np.exp(x).sum(axis=-1, keepdims=True))


def next_token_dist(
    model: SceneTransformer,
    tokens: np.ndarray,
    cam_flats: np.ndarray,
    pair_flats: np.ndarray | None,
    partial: np.ndarray,
    temperature: float = 1.0,
) -> np.ndarray:
    """Probability vector over the vocabulary for the next image token.

    ``partial`` holds the tokens decoded so far for the frame in progress;
    passing a full frame (or no frame in progress at all) is an error because
    the next sequence position would be a camera token, and cameras are
    inputs, never sampled.
    """
    if partial is None:
        raise SamplerError("next position is a camera position; cameras are inputs")
    partial = np.asarray(partial)
    if partial.ndim == 1:
        partial = partial[None]
    if partial.shape[1] >= model.config.tokens_per_frame:
        raise SamplerError("next position is a camera position; cameras are inputs")
    with T.no_grad():
        logits = model.forward(tokens, cam_flats, pair_flats, partial=partial,
                               predict="next").data
    if temperature == 0.0:
        out = np.zeros_like(logits, dtype=np.float64)
        out[np.arange(out.shape[0]), logits.argmax(axis=-1)] = 1.0
        return out[0] if out.shape[0] == 1 else out
    probs = np.exp(log_softmax(logits, temperature))
    return probs[0] if probs.shape[0] == 1 else probs


@dataclass
class Beam:
    tokens: tuple
    score: float


def beam_search_frame(step_fn, hw: int, k: int, temperature: float = 1.0,
                      return_beams: bool = False):
    """Best token sequence of length hw under cumulative log-probability.

    step_fn(partials [m, p] int array) -> logits [m, vocab]; called once per
    token position with every live beam.  Deterministic: ties rank by the
    lexicographically smallest token sequence.
    """
    beams = [Beam((), 0.0)]
    steps = []
    for _ in range(hw):
        partials = np.array([b.tokens for b in beams], dtype=np.int64).reshape(len(beams), -1)
        logp = log_softmax(step_fn(partials), temperature)
        vocab = logp.shape[-1]
        width = min(k, vocab)
        cands = []
        for beam, row in zip(beams, logp):
            top = np.argsort(-row, kind="stable")[:width]
            for t in top:
                cands.append(Beam(beam.tokens + (int(t),), beam.score + float(row[t])))
        cands.sort(key=lambda b: (-b.score, b.tokens))
        beams = cands[:k]
        steps.append(beams)
    return (beams[0], steps) if return_beams else beams[0]


def sample_frame(step_fn, hw: int, top_k: int, temperature: float, rng) -> Beam:
    """Stochastic alternative to beam search: per-token top-k sampling."""
    tokens: tuple = ()
    score = 0.0
    for _ in range(hw):
        logp = log_softmax(step_fn(np.array([tokens], dtype=np.int64).reshape(1, -1)),
                           temperature)[0]
        order = np.argsort(-logp, kind="stable")[: max(1, top_k)]
        p = np.exp(logp[order])
        p /= p.sum()
        t = int(order[rng.choice(len(order), p=p)])
        tokens += (t,)
        score += float(logp[t])
    return Beam(tokens, score)


@dataclass
class StepResult:
    tokens: np.ndarray      # [h, w] grid
    frame: np.ndarray       # [H, W, 3] decoded pixels
    score: float            # cumulative log-probability of the decoded frame
    pose: geo.CameraPose


@dataclass
class RolloutSession:
    """Sliding-window decoding state: the last L-1 frames plus their poses."""

    model: SceneTransformer
    codec: object
    intrinsics: geo.Intrinsics
    cfg: RolloutConfig
    window: list = field(default_factory=list)  # (flat tokens [hw], pose)
    model_calls: int = 0
    last_window_poses: list = field(default_factory=list)

    def __post_init__(self):
        c = self.model.config
        if self.codec.config.tokens_per_frame != c.tokens_per_frame:
            raise SamplerError(
                f"trajectory/codec mismatch: codec grid {self.codec.config.tokens_per_frame} "
                f"tokens vs model hw {c.tokens_per_frame}"
            )
        self._rng = np.random.default_rng(self.cfg.seed)

    def start(self, first_frame: np.ndarray, first_pose: geo.CameraPose) -> None:
        cfgc = self.codec.config
        if first_frame.shape != (cfgc.height, cfgc.width, 3):
            raise SamplerError(
                f"trajectory/codec mismatch: frame {first_frame.shape} vs codec "
                f"{(cfgc.height, cfgc.width, 3)}"
            )
        tokens = self.codec.tokenize(first_frame)
        self.window = [(tokens.ravel(), first_pose)]

    def step_to(self, pose: geo.CameraPose) -> StepResult:
        if not self.window:
            raise SamplerError("session not started")
        c = self.model.config
        ctx_tokens = np.stack([t for t, _ in self.window])          # [F, hw]
        poses = [p for _, p in self.window] + [pose]
        self.last_window_poses = list(poses)
        cam_flats, pair_flats = clip_camera_features(
            self.intrinsics, poses, self.codec.config.width, c.bias_on_diagonal
        )
        if not c.use_camera_bias:
            pair_flats = None

        def step_fn(partials: np.ndarray) -> np.ndarray:
            m = partials.shape[0]
            self.model_calls += 1
            with T.no_grad():
                logits = self.model.forward(
                    np.repeat(ctx_tokens[None], m, axis=0),
                    np.repeat(cam_flats[None], m, axis=0),
                    None if pair_flats is None else np.repeat(pair_flats[None], m, axis=0),
                    partial=partials,
                    predict="next",
                )
            return logits.data

        if self.cfg.top_k:
            best = sample_frame(step_fn, c.tokens_per_frame, self.cfg.top_k,
                                self.cfg.temperature, self._rng)
        else:
            best = beam_search_frame(step_fn, c.tokens_per_frame, self.cfg.beam_width,
                                     self.cfg.temperature)
        flat = np.array(best.tokens, dtype=np.int64)
        self.window.append((flat, pose))
        if len(self.window) > c.clip_len - 1:
            self.window.pop(0)
        grid = flat.reshape(self.codec.config.grid_h, self.codec.config.grid_w)
        frame = self.codec.detokenize(grid)
        return StepResult(grid, frame, best.score, pose)


def rollout(
    model: SceneTransformer,
    codec,
    intrinsics: geo.Intrinsics,
    first_frame: np.ndarray,
    poses: list[geo.CameraPose],
    cfg: RolloutConfig,
) -> list[StepResult]:
    """Generate frames 2..T along a pose trajectory from a single input frame."""
    if len(poses) != cfg.total_steps:
        raise SamplerError(
            f"trajectory of {len(poses)} poses does not match total_steps {cfg.total_steps}"
        )
    session = RolloutSession(model, codec, intrinsics, cfg)
    session.start(first_frame, poses[0])
    return [session.step_to(p) for p in poses[1:]]
