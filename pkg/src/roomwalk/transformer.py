"""Decoder-only causal transformer over interleaved image and camera tokens.

A clip of L frames enters as the token sequence
``[img_1, cam_2, img_2, ..., cam_L, img_L]`` where each image block holds hw
codebook indices and each camera block holds the M scalars of the flattened
relative camera.  Three positional signals are decoupled: a learnable
spatial table shared by every frame, a learnable camera table shared by
every transition, and a fixed sinusoidal table over the whole sequence.
Attention scores between image blocks receive an additive bias computed by a
small per-block MLP from the flattened relative camera between the query
frame and the key frame; camera-token rows and columns receive no bias.  The
MLP's output layer starts at zero, so an untrained model is exactly a
vanilla causal transformer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import geometry as geo
from . import tensor as T
from .optim import ParamStore


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    clip_len: int = 3           # frames per training clip (L)
    tokens_per_frame: int = 64  # image tokens per frame (hw)
    cam_dim: int = 21           # scalars per flattened camera (M)
    d_e: int = 128
    n_heads: int = 4
    n_blocks: int = 4
    vocab: int = 256
    mlp_hidden: int = 512
    decoupled_pe: bool = True
    use_camera_bias: bool = True
    bias_per_head: bool = False
    bias_hidden: int = 0        # 0 means 4 * cam_dim
    bias_on_diagonal: bool = True

    def __post_init__(self):
        if self.d_e % self.n_heads:
            raise ModelError(f"d_e {self.d_e} not divisible by {self.n_heads} heads")

    @property
    def seq_len(self) -> int:
        return self.clip_len * self.tokens_per_frame + (self.clip_len - 1) * self.cam_dim

    @property
    def d_head(self) -> int:
        return self.d_e // self.n_heads

    @property
    def phi_hidden(self) -> int:
        return self.bias_hidden or 4 * self.cam_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def desk_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def paper_config() -> ModelConfig:
    """Published-scale structural preset; used for arithmetic checks, not training."""
    return ModelConfig(
        clip_len=3, tokens_per_frame=256, cam_dim=30, d_e=1024,
        n_heads=16, n_blocks=32, vocab=16384, mlp_hidden=4096,
    )


# -- sequence layout ---------------------------------------------------------------

KIND_IMAGE = 0
KIND_CAMERA = 1


class SequenceLayout:
    """Position bookkeeping for [img_1, cam_2, img_2, ..., cam_L, img_L]."""

    def __init__(self, clip_len: int, tokens_per_frame: int, cam_dim: int):
        self.clip_len = clip_len
        self.hw = tokens_per_frame
        self.cam_dim = cam_dim
        self.seq_len = clip_len * self.hw + (clip_len - 1) * cam_dim
        kinds = []
        frames = []
        within = []
        for l in range(clip_len):
            if l > 0:
                kinds += [KIND_CAMERA] * cam_dim
                frames += [l] * cam_dim
                within += list(range(cam_dim))
            kinds += [KIND_IMAGE] * self.hw
            frames += [l] * self.hw
            within += list(range(self.hw))
        self.kinds = np.array(kinds)
        self.frame_of = np.array(frames)
        self.within = np.array(within)

    def image_start(self, frame: int) -> int:
        return frame * (self.hw + self.cam_dim)

    def camera_start(self, frame: int) -> int:
        if frame == 0:
            raise ModelError("frame 0 is the anchor view and has no camera block")
        return (frame - 1) * (self.hw + self.cam_dim) + self.hw

    def loss_positions(self) -> np.ndarray:
        """Positions of image tokens in frames 2..L (0-based frames 1..L-1)."""
        return np.nonzero((self.kinds == KIND_IMAGE) & (self.frame_of >= 1))[0]

    def prefix_len(self, n_frames: int, partial: int) -> int:
        """Sequence length with n_frames full frames plus a partial last frame."""
        return self.image_start(n_frames) + self.cam_dim + partial


def sinusoidal_table(n: int, d: int, dtype=np.float32) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d // 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / d)
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle)
    return table.astype(dtype)


def frame_pairs(n_frames: int, include_diagonal: bool) -> list[tuple[int, int]]:
    """Ordered (query_frame, key_frame) pairs with key <= query, 0-based."""
    return [
        (i, j)
        for i in range(n_frames)
        for j in range(i + 1 if include_diagonal else i)
    ]


def clip_camera_features(
    k: geo.Intrinsics,
    poses: list[geo.CameraPose],
    image_width: float,
    include_diagonal: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Flattened conditioning vectors for a window of poses.

    Returns (cam_flats [F-1, M], pair_flats [n_pairs, M]): the canonical
    per-frame cameras relative to the window's first pose, and one vector per
    ordered frame pair (query i, key j <= i) holding the transform from the
    query frame to the key frame.
    """
    cams = geo.canonicalize(poses) if len(poses) > 1 else []
    cam_flats = np.stack(
        [geo.flatten(k, rel, image_width).values for rel in cams]
    ) if cams else np.zeros((0, geo.FLAT_LEN))
    pair_flats = []
    for i, j in frame_pairs(len(poses), include_diagonal):
        rel = geo.relative(poses[i], poses[j])
        pair_flats.append(geo.flatten(k, rel, image_width).values)
    return cam_flats, np.stack(pair_flats)


# -- the model ------------------------------------------------------------------------


class SceneTransformer:
    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.layout = SequenceLayout(config.clip_len, config.tokens_per_frame, config.cam_dim)
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c = config
        add = self.store.add

        def normal(*shape, scale=0.02):
            return (rng.normal(size=shape) * scale).astype(dtype)

        add("tok_emb", normal(c.vocab, c.d_e))
        if c.decoupled_pe:
            add("pos_spatial", normal(c.tokens_per_frame, c.d_e))
            add("pos_camera", normal(c.cam_dim, c.d_e))
        else:
            add("pos_single", normal(c.seq_len, c.d_e))
        add("cam_enc.w", normal(c.d_e), decay=True)
        add("cam_enc.b", np.zeros(c.d_e, dtype=dtype))
        n_bias_out = c.tokens_per_frame**2 * (c.n_heads if c.bias_per_head else 1)
        for b in range(c.n_blocks):
            p = f"blocks.{b}."
            for nm in ("wq", "wk", "wv", "wo"):
                add(p + nm, normal(c.d_e, c.d_e), decay=True)
                add(p + nm.replace("w", "b"), np.zeros(c.d_e, dtype=dtype))
            add(p + "ln1.g", np.ones(c.d_e, dtype=dtype))
            add(p + "ln1.b", np.zeros(c.d_e, dtype=dtype))
            add(p + "ln2.g", np.ones(c.d_e, dtype=dtype))
            add(p + "ln2.b", np.zeros(c.d_e, dtype=dtype))
            add(p + "mlp.w1", normal(c.d_e, c.mlp_hidden), decay=True)
            add(p + "mlp.b1", np.zeros(c.mlp_hidden, dtype=dtype))
            add(p + "mlp.w2", normal(c.mlp_hidden, c.d_e), decay=True)
            add(p + "mlp.b2", np.zeros(c.d_e, dtype=dtype))
            if c.use_camera_bias:
                add(p + "phi.w1", normal(c.cam_dim, c.phi_hidden, scale=0.1), decay=True)
                add(p + "phi.b1", np.zeros(c.phi_hidden, dtype=dtype))
                # zero output layer: training starts at exactly vanilla attention
                add(p + "phi.w2", np.zeros((c.phi_hidden, n_bias_out), dtype=dtype), decay=True)
                add(p + "phi.b2", np.zeros(n_bias_out, dtype=dtype))
        add("ln_f.g", np.ones(c.d_e, dtype=dtype))
        add("ln_f.b", np.zeros(c.d_e, dtype=dtype))
        # zero head: initial prediction is uniform over the vocabulary
        add("head.w", np.zeros((c.d_e, c.vocab), dtype=dtype), decay=True)
        add("head.b", np.zeros(c.vocab, dtype=dtype))
        self.pos_temporal = sinusoidal_table(c.seq_len, c.d_e, dtype)

    # -- assembly ------------------------------------------------------------------

    def assemble(self, tokens: np.ndarray, cam_flats: np.ndarray, partial=None) -> T.Tensor:
        """Embed a clip (or a decode-time prefix) into transformer inputs.

        tokens: [B, F, hw] full frames; cam_flats: [B, F_cams, M] with
        F_cams = F - 1 for a full clip, or F when a partial frame follows.
        partial: [B, p] tokens of the frame being generated (p may be 0).
        """
        c = self.config
        tokens = np.asarray(tokens)
        if tokens.ndim != 3 or tokens.shape[2] != c.tokens_per_frame:
            raise ModelError(f"token grids {tokens.shape} do not match hw={c.tokens_per_frame}")
        b, n_full = tokens.shape[0], tokens.shape[1]
        n_frames = n_full + (1 if partial is not None else 0)
        if n_frames > c.clip_len:
            raise ModelError(f"{n_frames} frames exceed clip length {c.clip_len}")
        cam_flats = np.asarray(cam_flats, dtype=self.dtype)
        if cam_flats.shape != (b, n_frames - 1, c.cam_dim):
            raise ModelError(
                f"camera stack {cam_flats.shape} does not match "
                f"(batch {b}, frames {n_frames}, M {c.cam_dim})"
            )
        p = self.store
        pieces = []
        spat = p["pos_spatial"] if c.decoupled_pe else None
        camt = p["pos_camera"] if c.decoupled_pe else None

        def img_block(tok):
            e = T.embedding(p["tok_emb"], tok)
            return e + spat if c.decoupled_pe else e

        def cam_block(flat_t):
            e = T.reshape(flat_t, (b, -1, c.cam_dim, 1)) * p["cam_enc.w"] + p["cam_enc.b"]
            e = T.reshape(e, (b, -1, c.d_e))
            return e + camt if c.decoupled_pe else e

        pieces.append(img_block(tokens[:, 0]))
        for l in range(1, n_frames):
            pieces.append(cam_block(T.Tensor(cam_flats[:, l - 1 : l])))
            if l < n_full:
                pieces.append(img_block(tokens[:, l]))
        if partial is not None:
            partial = np.asarray(partial)
            if partial.shape[1]:
                pieces.append(img_block_partial(self, partial))
        x = T.concat(pieces, axis=1)
        n_cur = x.shape[1]
        if c.decoupled_pe:
            x = x + T.Tensor(self.pos_temporal[None, :n_cur])
        else:
            x = x + T.reshape(p["pos_single"][np.arange(n_cur)], (1, n_cur, c.d_e))
        return x

    # -- attention bias -----------------------------------------------------------------

    def _bias_spans(self, n_frames: int, partial_len: int | None):
        """Score-space regions for each frame pair, cropping the partial frame."""
        c = self.config
        lay = self.layout
        pairs = frame_pairs(n_frames, c.bias_on_diagonal)
        spans = []
        for i, j in pairs:
            rlen = c.tokens_per_frame if (partial_len is None or i < n_frames - 1) else partial_len
            clen = c.tokens_per_frame if (partial_len is None or j < n_frames - 1) else partial_len
            spans.append((lay.image_start(i), rlen, lay.image_start(j), clen))
        return pairs, spans

    def _block_bias(self, block: int, pair_flats_t: T.Tensor, spans, n_cur: int):
        """[B, P, M] pair features -> [B or B*H, n_cur, n_cur] additive bias."""
        c = self.config
        p = self.store
        pre = f"blocks.{block}."
        h = T.gelu(pair_flats_t @ p[pre + "phi.w1"] + p[pre + "phi.b1"])
        out = h @ p[pre + "phi.w2"] + p[pre + "phi.b2"]  # [B, P, hw*hw*(H?)]
        b, n_pairs = out.shape[0], out.shape[1]
        hw = c.tokens_per_frame
        if c.bias_per_head:
            out = T.reshape(out, (b, n_pairs, c.n_heads, hw, hw))
            out = T.transpose(out, (0, 2, 1, 3, 4)).reshape((b * c.n_heads, n_pairs, hw, hw))
            scat = T.block_scatter(out, spans, n_cur, n_cur)
            return T.reshape(scat, (b, c.n_heads, n_cur, n_cur))
        out = T.reshape(out, (b, n_pairs, hw, hw))
        scat = T.block_scatter(out, spans, n_cur, n_cur)
        return T.reshape(scat, (b, 1, n_cur, n_cur))

    # -- forward --------------------------------------------------------------------------

    def forward(
        self,
        tokens: np.ndarray,
        cam_flats: np.ndarray,
        pair_flats: np.ndarray | None = None,
        partial: np.ndarray | None = None,
        predict: str = "train",
        return_hidden: bool = False,
    ):
        """Causal forward pass.

        predict="train": logits [B, (L-1)*hw, vocab] for the loss positions.
        predict="next": logits [B, vocab] for the next sequence position.
        pair_flats [B, P, M] feeds the attention-bias MLPs; required when the
        model was built with use_camera_bias.
        """
        c = self.config
        x = self.assemble(tokens, cam_flats, partial)
        b, n_cur, _ = x.shape
        n_frames = np.asarray(tokens).shape[1] + (1 if partial is not None else 0)
        partial_len = None if partial is None else np.asarray(partial).shape[1]

        biases = None
        if c.use_camera_bias:
            if pair_flats is None:
                raise ModelError("camera-bias model requires pair_flats")
            pairs, spans = self._bias_spans(n_frames, partial_len)
            pair_flats = np.asarray(pair_flats, dtype=self.dtype)
            if pair_flats.shape[1] != len(pairs):
                raise ModelError(
                    f"expected {len(pairs)} pair features, got {pair_flats.shape[1]}"
                )
            pair_t = T.Tensor(pair_flats)
        mask = np.triu(np.ones((n_cur, n_cur), dtype=bool), k=1)
        scale = 1.0 / np.sqrt(c.d_head)
        p = self.store
        for blk in range(c.n_blocks):
            pre = f"blocks.{blk}."
            h = T.layer_norm(x, p[pre + "ln1.g"], p[pre + "ln1.b"])
            bias_t = (
                self._block_bias(blk, pair_t, spans, n_cur) if c.use_camera_bias else None
            )
            attn = _attention(
                h, p, pre, c.n_heads, c.d_head, mask, bias_t, scale
            )
            x = x + attn
            h2 = T.layer_norm(x, p[pre + "ln2.g"], p[pre + "ln2.b"])
            m = T.gelu(h2 @ p[pre + "mlp.w1"] + p[pre + "mlp.b1"])
            x = x + (m @ p[pre + "mlp.w2"] + p[pre + "mlp.b2"])
            if np.isnan(x.data).any():
                raise ModelError(f"NaN activations after block {blk}")
        x = T.layer_norm(x, p["ln_f.g"], p["ln_f.b"])
        if predict == "next":
            hidden = x[(slice(None), slice(n_cur - 1, n_cur))]
            logits = T.reshape(hidden @ p["head.w"] + p["head.b"], (b, c.vocab))
        elif predict == "train":
            positions = self.layout.loss_positions()
            hidden = x[(slice(None), positions - 1)]
            logits = hidden @ p["head.w"] + p["head.b"]
        elif predict == "last_frame":
            if partial is not None or n_frames < 2:
                raise ModelError("last_frame prediction needs >= 2 full frames")
            start = self.layout.image_start(n_frames - 1)
            positions = np.arange(start, start + c.tokens_per_frame)
            hidden = x[(slice(None), positions - 1)]
            logits = hidden @ p["head.w"] + p["head.b"]
        else:
            raise ModelError(f"unknown predict mode {predict!r}")
        if return_hidden:
            return logits, x
        return logits

    def loss(self, logits: T.Tensor, target_tokens: np.ndarray) -> T.Tensor:
        """Mean cross-entropy over the predicted image tokens of frames 2..L."""
        c = self.config
        targets = np.asarray(target_tokens).reshape(-1)
        flat = T.reshape(logits, (-1, c.vocab))
        if targets.shape[0] != flat.shape[0]:
            raise ModelError(
                f"{flat.shape[0]} logit rows vs {targets.shape[0]} targets"
            )
        return T.cross_entropy(flat, targets)

    # -- persistence ---------------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        meta = {"step": self.store.step_count}
        meta.update(extra or {})
        ckpt.save(path, self.store.state_arrays(), self.config.to_dict(), extra=meta)

    @classmethod
    def load(cls, path, expected_config: ModelConfig | None = None) -> "SceneTransformer":
        expected = expected_config.to_dict() if expected_config else None
        arrays, header = ckpt.load(path, expected_config=expected)
        config = ModelConfig.from_dict(header["config"])
        model = cls(config)
        model.store.load_state_arrays(arrays, header["extra"].get("step", 0))
        return model


def img_block_partial(model: SceneTransformer, partial: np.ndarray) -> T.Tensor:
    c = model.config
    e = T.embedding(model.store["tok_emb"], partial)
    if c.decoupled_pe:
        e = e + model.store["pos_spatial"][np.arange(partial.shape[1])]
    return e


def _attention(h, p, pre, n_heads, d_head, mask, bias_t, scale):
    b, n, d = h.shape

    def project(name):
        out = h @ p[pre + name] + p[pre + name.replace("w", "b")]
        out = T.reshape(out, (b, n, n_heads, d_head))
        return T.transpose(out, (0, 2, 1, 3))

    q, k, v = project("wq"), project("wk"), project("wv")
    scores = q @ T.transpose(k, (0, 1, 3, 2))
    if bias_t is not None:
        scores = scores + bias_t
    scores = scores * scale
    scores = T.mask_fill(scores, mask[None, None], -np.inf)
    weights = T.softmax(scores, axis=-1)
    out = weights @ v
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (b, n, d))
    return out @ p[pre + "wo"] + p[pre + "bo"]


def attention_core(q, k, v, mask, bias=None, scale=None):
    """Single-head attention on raw arrays; exposed for tests."""
    qt, kt, vt = T.Tensor(q), T.Tensor(k), T.Tensor(v)
    scores = qt @ T.transpose(kt, tuple(range(kt.ndim - 2)) + (kt.ndim - 1, kt.ndim - 2))
    if bias is not None:
        scores = scores + T.Tensor(bias)
    if scale is None:
        scale = 1.0 / np.sqrt(q.shape[-1])
    scores = scores * scale
    scores = T.mask_fill(scores, mask, -np.inf)
    weights = T.softmax(scores, axis=-1)
    return (weights @ vt).data, weights.data
