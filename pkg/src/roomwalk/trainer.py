"""Training: clip batches, the teacher-forced loop, error-accumulation
finetuning, checkpointing, and the ablation harness.

Episodes are tokenized once by the frozen codec; training clips are L
consecutive frames sampled with random start offsets, with cameras
canonicalized to each clip's first pose.  Finetuning simulates inference
drift: one context frame per clip is replaced by the model's own greedy
decode (round-tripped through the codec's decoder and encoder), and the step
trains on the targets that follow it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import metrics as mt
from . import tensor as T
from . import worldgen as wg
from .optim import adamw_step, cosine_lr
from .sampler import RolloutConfig, RolloutSession, beam_search_frame
from .transformer import (
    ModelConfig,
    ModelError,
    SceneTransformer,
    clip_camera_features,
    frame_pairs,
)


class TrainError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    total_steps: int = 20_000
    lr: float = 3e-4
    weight_decay: float = 0.01
    seed: int = 0
    clip_len: int = 3
    finetune_steps: int = 2_000
    finetune_self_frames: int = 1
    grad_clip: float | None = None
    log_every: int = 25

    def __post_init__(self):
        if self.batch_size < 1 or self.total_steps < 1:
            raise TrainError("batch size and step count must be positive")

    @property
    def base_steps(self) -> int:
        return self.total_steps - self.finetune_steps

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Episode:
    tokens: np.ndarray            # [T, hw] int
    frames: np.ndarray            # [T, H, W, 3] float
    poses: list[geo.CameraPose]
    intrinsics: geo.Intrinsics
    width: int
    meta: dict = field(default_factory=dict)


@dataclass
class ClipBatch:
    tokens: np.ndarray            # [B, L, hw]
    cam_flats: np.ndarray         # [B, L-1, M]
    pair_flats: np.ndarray        # [B, P, M]


class ClipDataset:
    def __init__(self, episodes: list[Episode], include_diagonal: bool = True):
        if not episodes:
            raise TrainError("dataset has no episodes")
        self.episodes = episodes
        self.include_diagonal = include_diagonal

    @classmethod
    def from_directory(cls, data_dir, codec, split: str, include_diagonal: bool = True):
        episodes = []
        for ep, frames, k, poses in wg.iter_episodes(data_dir, split=split):
            tokens = codec.tokenize(frames.astype(np.float32))
            episodes.append(
                Episode(
                    tokens=tokens.reshape(tokens.shape[0], -1),
                    frames=frames.astype(np.float32),
                    poses=poses,
                    intrinsics=k,
                    width=frames.shape[2],
                    meta=dict(ep),
                )
            )
        return cls(episodes, include_diagonal)

    def clip_features(self, episode: Episode, start: int, clip_len: int):
        poses = episode.poses[start : start + clip_len]
        return clip_camera_features(
            episode.intrinsics, poses, episode.width, self.include_diagonal
        )

    def sample_batch(self, rng, batch_size: int, clip_len: int) -> ClipBatch:
        tokens, cams, pairs = [], [], []
        for _ in range(batch_size):
            ep = self.episodes[int(rng.integers(0, len(self.episodes)))]
            t = ep.tokens.shape[0]
            if t < clip_len:
                raise TrainError(f"episode too short ({t}) for clip length {clip_len}")
            start = int(rng.integers(0, t - clip_len + 1))
            tokens.append(ep.tokens[start : start + clip_len])
            cam_flats, pair_flats = self.clip_features(ep, start, clip_len)
            cams.append(cam_flats)
            pairs.append(pair_flats)
        return ClipBatch(
            np.stack(tokens),
            np.stack(cams).astype(np.float32),
            np.stack(pairs).astype(np.float32),
        )


# -- steps ---------------------------------------------------------------------------


def train_step(
    model: SceneTransformer,
    batch: ClipBatch,
    lr: float,
    weight_decay: float,
    grad_clip: float | None = None,
    target_frames: list[int] | None = None,
) -> float:
    """One teacher-forced update; optionally restrict the loss to some target frames."""
    pair = batch.pair_flats if model.config.use_camera_bias else None
    logits = model.forward(batch.tokens, batch.cam_flats, pair)
    hw = model.config.tokens_per_frame
    if target_frames is None:
        loss = model.loss(logits, batch.tokens[:, 1:])
    else:
        rows = np.concatenate(
            [np.arange((f - 1) * hw, f * hw) for f in target_frames]
        )
        sub = logits[(slice(None), rows)]
        loss = model.loss(sub, batch.tokens[:, target_frames])
    value = float(loss.item())
    if not np.isfinite(value):
        raise TrainError("non-finite loss")
    model.store.zero_grad()
    loss.backward()
    adamw_step(model.store, lr, weight_decay, clip_norm=grad_clip)
    return value


def greedy_decode_frame(
    model: SceneTransformer,
    ctx_tokens: np.ndarray,
    cam_flats: np.ndarray,
    pair_flats: np.ndarray | None,
) -> np.ndarray:
    """Batched greedy decode of the next frame. ctx_tokens: [B, F, hw] -> [B, hw]."""
    b = ctx_tokens.shape[0]
    hw = model.config.tokens_per_frame
    out = np.zeros((b, 0), dtype=np.int64)
    with T.no_grad():
        for _ in range(hw):
            logits = model.forward(
                ctx_tokens, cam_flats, pair_flats, partial=out, predict="next"
            ).data
            out = np.concatenate([out, logits.argmax(axis=-1)[:, None]], axis=1)
    return out


def finetune_batch(
    model: SceneTransformer, codec, batch: ClipBatch, rng, n_self: int = 1
) -> tuple[ClipBatch, list[int]]:
    """Replace context frames with the model's own re-encoded greedy decodes.

    Eligible slots are frames 2..L-1 (never the anchor frame or the last
    target); n_self of them, drawn without replacement, are regenerated in
    ascending order so later decodes condition on earlier self-generated
    context.  Each decode goes through the codec's pixel round trip before
    re-entering the token sequence.
    """
    c = model.config
    eligible = list(range(1, c.clip_len - 1))
    if not eligible or n_self < 1:
        return batch, []
    picked = sorted(
        int(f) for f in rng.choice(eligible, size=min(n_self, len(eligible)), replace=False)
    )
    tokens = batch.tokens.copy()
    gh, gw = codec.config.grid_h, codec.config.grid_w
    for frame in picked:
        n_ctx = frame  # frames 0..frame-1 condition the decode
        n_pairs = len(frame_pairs(n_ctx + 1, c.bias_on_diagonal))
        pair = batch.pair_flats[:, :n_pairs] if c.use_camera_bias else None
        decoded = greedy_decode_frame(
            model, tokens[:, :n_ctx], batch.cam_flats[:, :n_ctx], pair
        )
        pixels = codec.detokenize(decoded.reshape(-1, gh, gw))
        tokens[:, frame] = codec.tokenize(pixels).reshape(decoded.shape[0], -1)
    return ClipBatch(tokens, batch.cam_flats, batch.pair_flats), picked


# -- loops --------------------------------------------------------------------------------


def train_model(
    model: SceneTransformer,
    dataset: ClipDataset,
    cfg: TrainConfig,
    codec=None,
    log_path=None,
) -> list[dict]:
    """Base teacher-forced training followed by error-accumulation finetuning.

    The cosine schedule spans the whole budget (base + finetune).  Finetune
    steps need the codec for the decode/re-encode round trip; with
    finetune_steps=0 the codec is unused.
    """
    if cfg.finetune_steps and codec is None:
        raise TrainError("finetuning requires the codec")
    rng = np.random.default_rng(cfg.seed)
    history = []
    log_f = open(log_path, "w") if log_path else None
    try:
        for step in range(cfg.total_steps):
            batch = dataset.sample_batch(rng, cfg.batch_size, cfg.clip_len)
            lr = cosine_lr(step, cfg.total_steps, cfg.lr)
            target_frames = None
            if step >= cfg.base_steps:
                batch, replaced = finetune_batch(
                    model, codec, batch, rng, n_self=cfg.finetune_self_frames
                )
                if replaced:
                    target_frames = [
                        f for f in range(1, cfg.clip_len) if f not in replaced
                    ] or None
            try:
                loss = train_step(
                    model, batch, lr, cfg.weight_decay, cfg.grad_clip, target_frames
                )
            except (TrainError, ModelError) as e:
                raise TrainError(f"{e} at step {step}") from None
            if step % cfg.log_every == 0 or step == cfg.total_steps - 1:
                rec = {"step": step, "lr": lr, "loss": loss}
                history.append(rec)
                if log_f:
                    log_f.write(json.dumps(rec) + "\n")
    finally:
        if log_f:
            log_f.close()
    return history


def save_checkpoint(model: SceneTransformer, path, cfg: TrainConfig, step: int) -> None:
    model.save(
        path,
        extra={
            "step": step,
            "lr_initial": cfg.lr,
            "lr_total_steps": cfg.total_steps,
            "train_config": cfg.to_dict(),
        },
    )


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[SceneTransformer, dict]:
    model = SceneTransformer.load(path, expected_config=expected_config)
    from . import checkpoint as ckpt

    _, header = ckpt.load(path)
    return model, header["extra"]


# -- evaluation -----------------------------------------------------------------------------


def validation_ce(model: SceneTransformer, dataset: ClipDataset, n_batches: int,
                  batch_size: int, seed: int = 0) -> float:
    """Teacher-forced cross-entropy on held-out clips."""
    rng = np.random.default_rng(seed)
    losses = []
    with T.no_grad():
        for _ in range(n_batches):
            batch = dataset.sample_batch(rng, batch_size, model.config.clip_len)
            pair = batch.pair_flats if model.config.use_camera_bias else None
            logits = model.forward(batch.tokens, batch.cam_flats, pair)
            losses.append(model.loss(logits, batch.tokens[:, 1:]).item())
    return float(np.mean(losses))


def frame_ce(model: SceneTransformer, window_tokens, window_cams, window_pairs,
             true_tokens) -> float:
    """Cross-entropy of one true frame given an arbitrary context window."""
    c = model.config
    hw = c.tokens_per_frame
    tokens = np.concatenate([window_tokens, true_tokens[:, None, :]], axis=1)
    with T.no_grad():
        logits = model.forward(
            tokens, window_cams, window_pairs, predict="last_frame"
        )
        loss = T.cross_entropy(
            T.reshape(logits, (-1, c.vocab)), true_tokens.reshape(-1)
        )
    return float(loss.item())


def rollout_validation(
    model: SceneTransformer,
    codec,
    episodes: list[Episode],
    n_frames: int,
    beam_width: int = 1,
    include_diagonal: bool = True,
) -> dict:
    """Teacher-free rollout over validation trajectories.

    At every step the cross-entropy of the true next frame is measured under
    the model's own generated context, then the frame is generated and the
    window slides.  Returns the mean rollout CE, mean PSNR of generated
    frames against the ground-truth renders, and the frame stacks for
    distribution metrics.
    """
    ces, psnrs, gen, real = [], [], [], []
    for ep in episodes:
        t_total = min(n_frames, len(ep.poses))
        cfg = RolloutConfig(total_steps=t_total, beam_width=beam_width)
        session = RolloutSession(model, codec, ep.intrinsics, cfg)
        session.start(ep.frames[0], ep.poses[0])
        for t in range(1, t_total):
            window_tokens = np.stack([tok for tok, _ in session.window])[None]
            poses = [p for _, p in session.window] + [ep.poses[t]]
            cam_flats, pair_flats = clip_camera_features(
                ep.intrinsics, poses, ep.width, include_diagonal
            )
            pair = pair_flats[None] if model.config.use_camera_bias else None
            ces.append(
                frame_ce(model, window_tokens, cam_flats[None], pair, ep.tokens[t][None])
            )
            result = session.step_to(ep.poses[t])
            gen.append(result.frame)
            real.append(ep.frames[t])
            psnrs.append(mt.psnr(result.frame, ep.frames[t]))
    return {
        "rollout_ce": float(np.mean(ces)),
        "rollout_psnr": float(np.mean(psnrs)),
        "generated": np.stack(gen),
        "reference": np.stack(real),
    }


# -- ablations ---------------------------------------------------------------------------------


VARIANTS = ("full", "no_bias", "no_decoupled_pe", "no_error_accum", "L2", "L3", "L4", "L5")


def variant_config(base: ModelConfig, variant: str) -> tuple[ModelConfig, bool]:
    """Model config and whether error-accumulation finetuning applies."""
    d = base.to_dict()
    finetune = True
    if variant == "no_bias":
        d["use_camera_bias"] = False
    elif variant == "no_decoupled_pe":
        d["decoupled_pe"] = False
    elif variant == "no_error_accum":
        finetune = False
    elif variant.startswith("L") and variant[1:].isdigit():
        d["clip_len"] = int(variant[1:])
    elif variant != "full":
        raise TrainError(f"unknown variant {variant!r}")
    return ModelConfig(**d), finetune


def ablation_run(
    base_model_config: ModelConfig,
    train_set: ClipDataset,
    val_set: ClipDataset,
    codec,
    cfg: TrainConfig,
    variants: list[str],
    seeds: list[int],
    rollout_frames: int | None = None,
    out_csv=None,
) -> list[dict]:
    """Train each variant at an identical budget per seed; report metrics.

    Metrics per run: teacher-forced validation CE, teacher-free rollout CE,
    rollout PSNR against ground-truth renders, and the Frechet proxy between
    generated and real frame distributions (codec-encoder features).
    """
    rows = []
    for variant in variants:
        for seed in seeds:
            m_cfg, finetune = variant_config(base_model_config, variant)
            run_cfg = TrainConfig(
                **{
                    **cfg.to_dict(),
                    "seed": seed,
                    "clip_len": m_cfg.clip_len,
                    "finetune_steps": cfg.finetune_steps if finetune else 0,
                }
            )
            model = SceneTransformer(m_cfg, seed=seed)
            train_model(model, train_set, run_cfg, codec=codec)
            val_ce = validation_ce(
                model, val_set, n_batches=8, batch_size=cfg.batch_size, seed=1234
            )
            n_frames = rollout_frames or 2 * m_cfg.clip_len
            ro = rollout_validation(model, codec, val_set.episodes, n_frames)
            stats_gen = mt.feature_stats(ro["generated"], codec)
            stats_real = mt.feature_stats(ro["reference"], codec)
            row = {
                "variant": variant,
                "seed": seed,
                "val_ce": val_ce,
                "rollout_ce": ro["rollout_ce"],
                "rollout_psnr": ro["rollout_psnr"],
                "frechet": mt.frechet(stats_gen, stats_real),
            }
            rows.append(row)
    if out_csv:
        import csv

        with open(out_csv, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
    return rows
