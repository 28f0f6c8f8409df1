"""Vector-quantized image codec: encoder, codebook, decoder, and training.

A small convolutional autoencoder maps [H, W, 3] frames to an (H/f, W/f)
grid of d_b-dimensional latents; each latent is snapped to its nearest
codebook entry (squared distance, ties to the lowest index) to produce the
integer token grid the transformer models.  Training minimizes L2
reconstruction plus codebook and commitment terms, with the straight-through
estimator carrying decoder gradients past the argmin into the encoder.

Codebook entries that fall out of use are re-seeded from random batch
latents every ``reseed_every`` steps; if fewer than 5% of entries are used
at the end of training a warning suggests rerunning with a fresh seed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import tensor as T
from .optim import ParamStore, adamw_step, cosine_lr

log = logging.getLogger(__name__)


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecConfig:
    height: int = 32
    width: int = 32
    factor: int = 4
    d_b: int = 16
    codebook_size: int = 256
    channels: tuple = (32, 64)
    commitment_beta: float = 0.25

    def __post_init__(self):
        if self.height % self.factor or self.width % self.factor:
            raise CodecError(
                f"frame dims {self.height}x{self.width} not divisible by factor {self.factor}"
            )
        if self.codebook_size < 2:
            raise CodecError("codebook needs at least 2 entries")

    @property
    def grid_h(self) -> int:
        return self.height // self.factor

    @property
    def grid_w(self) -> int:
        return self.width // self.factor

    @property
    def tokens_per_frame(self) -> int:
        return self.grid_h * self.grid_w

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(d["channels"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)


def _conv_init(rng, out_c, in_c, k):
    scale = np.sqrt(2.0 / (in_c * k * k))
    return (rng.normal(size=(out_c, in_c, k, k)) * scale).astype(np.float32)


class Codec:
    def __init__(self, config: CodecConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        c1, c2 = config.channels
        add = self.store.add

        def conv(name, out_c, in_c, k=3):
            add(f"{name}.w", _conv_init(rng, out_c, in_c, k).astype(dtype), decay=True)
            add(f"{name}.b", np.zeros(out_c, dtype=dtype))

        conv("enc0", c1, 3)
        conv("enc1", c2, c1)
        conv("enc2", c2, c2)  # extra context at the cheap bottleneck resolution
        conv("enc3", config.d_b, c2)
        conv("dec0", c2, config.d_b)
        conv("dec1", c2, c2)
        conv("dec2", c1, c2)
        conv("dec3", 3, c1)
        book = rng.normal(size=(config.codebook_size, config.d_b)) * 0.05
        add("codebook", book.astype(dtype))

    @property
    def codebook(self) -> np.ndarray:
        return self.store["codebook"].data

    # -- network halves (Tensor in, Tensor out; used by training and inference) --

    def _encode_t(self, x: T.Tensor) -> T.Tensor:
        """[B, 3, H, W] -> [B, d_b, h, w]"""
        p = self.store
        h = T.gelu(T.conv2d(x, p["enc0.w"], p["enc0.b"], stride=2, padding=1))
        h = T.gelu(T.conv2d(h, p["enc1.w"], p["enc1.b"], stride=2, padding=1))
        h = T.gelu(T.conv2d(h, p["enc2.w"], p["enc2.b"], stride=1, padding=1))
        return T.conv2d(h, p["enc3.w"], p["enc3.b"], stride=1, padding=1)

    def _decode_t(self, z: T.Tensor) -> T.Tensor:
        """[B, d_b, h, w] -> [B, 3, H, W] in (0, 1)"""
        p = self.store
        h = T.gelu(T.conv2d(z, p["dec0.w"], p["dec0.b"], stride=1, padding=1))
        h = T.gelu(T.conv2d(h, p["dec1.w"], p["dec1.b"], stride=1, padding=1))
        h = T.upsample_nearest(h, 2)
        h = T.gelu(T.conv2d(h, p["dec2.w"], p["dec2.b"], stride=1, padding=1))
        h = T.upsample_nearest(h, 2)
        return T.sigmoid(T.conv2d(h, p["dec3.w"], p["dec3.b"], stride=1, padding=1))

    # -- public numpy surface ------------------------------------------------------

    def _check_frame(self, frame: np.ndarray) -> None:
        cfg = self.config
        if frame.shape[-3] % cfg.factor or frame.shape[-2] % cfg.factor:
            raise CodecError(
                f"frame dims {frame.shape[-3]}x{frame.shape[-2]} not divisible by "
                f"factor {cfg.factor}"
            )

    def encode(self, frames: np.ndarray) -> np.ndarray:
        """Frames [..., H, W, 3] in [0, 1] -> latents [..., h, w, d_b]."""
        frames = np.asarray(frames)
        single = frames.ndim == 3
        if single:
            frames = frames[None]
        self._check_frame(frames)
        x = frames.transpose(0, 3, 1, 2).astype(self.codebook.dtype)
        with T.no_grad():
            z = self._encode_t(T.Tensor(x)).data
        z = z.transpose(0, 2, 3, 1)
        return z[0] if single else z

    def quantize(self, latents: np.ndarray) -> np.ndarray:
        return quantize(latents, self.codebook)

    def lookup(self, tokens: np.ndarray) -> np.ndarray:
        return lookup(tokens, self.codebook)

    def decode(self, latents: np.ndarray) -> np.ndarray:
        """Latents [..., h, w, d_b] -> frames [..., H, W, 3] in (0, 1)."""
        latents = np.asarray(latents)
        single = latents.ndim == 3
        if single:
            latents = latents[None]
        cfg = self.config
        if latents.shape[1:] != (cfg.grid_h, cfg.grid_w, cfg.d_b):
            raise CodecError(
                f"latent grid {latents.shape[1:]} does not match decoder "
                f"({cfg.grid_h}, {cfg.grid_w}, {cfg.d_b})"
            )
        z = latents.transpose(0, 3, 1, 2).astype(self.codebook.dtype)
        with T.no_grad():
            x = self._decode_t(T.Tensor(z)).data
        x = x.transpose(0, 2, 3, 1)
        return x[0] if single else x

    def tokenize(self, frames: np.ndarray) -> np.ndarray:
        return self.quantize(self.encode(frames))

    def detokenize(self, tokens: np.ndarray) -> np.ndarray:
        return self.decode(self.lookup(tokens))

    def reconstruct(self, frames: np.ndarray) -> np.ndarray:
        return self.detokenize(self.tokenize(frames))

    def encode_features(self, frames: np.ndarray) -> np.ndarray:
        """Spatially mean-pooled encoder latents; one d_b vector per frame."""
        z = self.encode(np.asarray(frames))
        if z.ndim == 3:
            z = z[None]
        return z.mean(axis=(1, 2))

    # -- persistence ------------------------------------------------------------------

    def save(self, path) -> None:
        arrays = dict(self.store.state_arrays())
        ckpt.save(path, arrays, self.config.to_dict(), extra={"step": self.store.step_count})

    @classmethod
    def load(cls, path) -> "Codec":
        arrays, header = ckpt.load(path)
        config = CodecConfig.from_dict(header["config"])
        codec = cls(config)
        codec.store.load_state_arrays(arrays, header["extra"].get("step", 0))
        return codec


def quantize(latents: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Nearest codebook entry per cell (squared distance, ties to lowest index)."""
    codebook = np.asarray(codebook)
    if codebook.size == 0:
        raise CodecError("empty codebook")
    latents = np.asarray(latents)
    if latents.shape[-1] != codebook.shape[1]:
        raise CodecError(
            f"latent width {latents.shape[-1]} != codebook width {codebook.shape[1]}"
        )
    flat = latents.reshape(-1, codebook.shape[1])
    # |y - b|^2 = |y|^2 - 2 y.b + |b|^2; the |y|^2 term is constant per row
    d = (codebook**2).sum(axis=1)[None, :] - 2.0 * flat @ codebook.T
    idx = np.argmin(d, axis=1)
    return idx.reshape(latents.shape[:-1])


def lookup(tokens: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    tokens = np.asarray(tokens)
    codebook = np.asarray(codebook)
    bad = (tokens < 0) | (tokens >= codebook.shape[0])
    if bad.any():
        pos = tuple(int(i[0]) for i in np.nonzero(bad))
        raise CodecError(
            f"token index {int(tokens[pos])} at {pos} out of range "
            f"for codebook of {codebook.shape[0]}"
        )
    return codebook[tokens]


def train_codec(
    frames: np.ndarray,
    config: CodecConfig,
    steps: int = 3000,
    batch_size: int = 16,
    lr: float = 1e-3,
    weight_decay: float = 0.0,
    seed: int = 0,
    reseed_every: int = 500,
    log_every: int = 100,
) -> tuple[Codec, list[dict]]:
    """Train a codec on a [N, H, W, 3] frame stack; returns (codec, history)."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise CodecError("training needs a non-empty [N, H, W, 3] frame stack")
    codec = Codec(config, seed=seed)
    rng = np.random.default_rng(seed + 1)
    n = frames.shape[0]
    beta = config.commitment_beta

    # data-dependent codebook init: a few k-means rounds over encoder outputs
    boot = frames[rng.choice(n, size=min(n, 96), replace=False)]
    z0 = codec.encode(boot).reshape(-1, config.d_b)
    pick = rng.choice(z0.shape[0], size=config.codebook_size, replace=z0.shape[0] < config.codebook_size)
    book = z0[pick].copy()
    for _ in range(5):
        assign = quantize(z0, book)
        for j in range(config.codebook_size):
            members = z0[assign == j]
            if members.shape[0]:
                book[j] = members.mean(axis=0)
            else:
                book[j] = z0[rng.integers(0, z0.shape[0])]
    codec.store["codebook"].data = (
        book + rng.normal(size=book.shape) * 0.005
    ).astype(np.float32)

    usage = np.zeros(config.codebook_size, dtype=np.int64)
    history = []
    for step in range(steps):
        idx = rng.choice(n, size=min(batch_size, n), replace=n < batch_size)
        x_np = frames[idx].transpose(0, 3, 1, 2)
        x = T.Tensor(x_np)
        z_e = codec._encode_t(x)
        b, d_b, gh, gw = z_e.shape
        z_flat = T.transpose(z_e, (0, 2, 3, 1)).reshape((b * gh * gw, d_b))
        tokens = quantize(z_flat.data, codec.codebook)
        usage[np.unique(tokens)] += 1
        q = T.embedding(codec.store["codebook"], tokens)
        # straight-through: decoder sees q, encoder receives its gradient
        z_q = z_flat + (q - z_flat).detach()
        z_q = T.transpose(z_q.reshape((b, gh, gw, d_b)), (0, 3, 1, 2))
        recon = codec._decode_t(z_q)
        recon_loss = T.square(recon - x).mean()
        codebook_loss = T.square(q - z_flat.detach()).mean()
        commit_loss = T.square(z_flat - q.detach()).mean()
        loss = recon_loss + codebook_loss + beta * commit_loss
        codec.store.zero_grad()
        loss.backward()
        adamw_step(codec.store, cosine_lr(step, steps, lr), weight_decay)
        if step % log_every == 0 or step == steps - 1:
            history.append(
                {
                    "step": step,
                    "loss": float(loss.item()),
                    "recon": float(recon_loss.item()),
                    "usage": float((usage > 0).mean()),
                }
            )
        if reseed_every and (step + 1) % reseed_every == 0 and step + 1 < steps:
            dead = np.nonzero(usage == 0)[0]
            if dead.size:
                src = z_flat.data[rng.choice(z_flat.shape[0], size=dead.size)]
                book = codec.store["codebook"].data
                book[dead] = src + rng.normal(size=src.shape).astype(np.float32) * 0.01
                codec.store.m["codebook"][dead] = 0.0
                codec.store.v["codebook"][dead] = 0.0
            usage[:] = 0

    final_usage = codebook_usage(codec, frames[rng.choice(n, size=min(n, 256), replace=False)])
    if final_usage < 0.05:
        log.warning(
            "dead codebook: only %.1f%% of entries used; retrain with a different "
            "seed or lower the codebook size",
            100 * final_usage,
        )
    history.append({"step": steps, "loss": history[-1]["loss"] if history else None,
                    "recon": history[-1]["recon"] if history else None,
                    "usage": float(final_usage)})
    return codec, history


def codebook_usage(codec: Codec, frames: np.ndarray) -> float:
    """Fraction of codebook entries hit when tokenizing the given frames."""
    tokens = codec.tokenize(np.asarray(frames))
    return float(np.unique(tokens).size / codec.config.codebook_size)


# -- token-stream files ------------------------------------------------------------------


def write_token_stream(path, token_grids: np.ndarray, codec: Codec, codec_hash: str) -> None:
    """JSON token stream: header (h, w, codebook size, codec hash) + one grid per frame."""
    grids = np.asarray(token_grids)
    doc = {
        "h": codec.config.grid_h,
        "w": codec.config.grid_w,
        "codebook_size": codec.config.codebook_size,
        "codec_hash": codec_hash,
        "frames": [g.reshape(codec.config.grid_h, codec.config.grid_w).tolist() for g in grids],
    }
    Path(path).write_text(json.dumps(doc))


def read_token_stream(path) -> dict:
    doc = json.loads(Path(path).read_text())
    doc["frames"] = [np.asarray(f, dtype=np.int64) for f in doc["frames"]]
    return doc
