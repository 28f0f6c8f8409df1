"""Command-line surface: data generation, training, rollout, evaluation,
ablation, and the session service.

Every run writes ``resolved_config.json`` into its output directory echoing
the exact settings used (defaults, config-file values, and flags merged).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import geometry as geo
from . import metrics as mt
from . import worldgen as wg
from .codec import Codec, CodecConfig, codebook_usage, train_codec, write_token_stream
from .sampler import RolloutConfig, rollout
from .trainer import (
    ClipDataset,
    TrainConfig,
    ablation_run,
    save_checkpoint,
    train_model,
)
from .transformer import ModelConfig, SceneTransformer


def load_config_file(path) -> dict:
    if path is None:
        return {}
    return json.loads(Path(path).read_text())


def write_echo(out_dir, command: str, settings: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {"command": command, "settings": settings}
    (out_dir / "resolved_config.json").write_text(json.dumps(echo, indent=1, default=str))


def require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        print(f"error: {what} not found: {p}", file=sys.stderr)
        raise SystemExit(2)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roomwalk")
    parser.add_argument("--config", help="JSON config file with model/train/codec sections")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic room dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--train-scenes", type=int, default=12)
    p.add_argument("--test-scenes", type=int, default=3)
    p.add_argument("--episodes", type=int, default=2)
    p.add_argument("--steps", type=int, default=12)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--width", type=int, default=32)

    p = sub.add_parser("train-codec", help="train the image codec")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)

    p = sub.add_parser("train-model", help="train the view-synthesis transformer")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int, default=20000)
    p.add_argument("--finetune-steps", type=int, default=2000)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=3e-4)

    p = sub.add_parser("rollout", help="generate frames along a camera trajectory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scene-seed", type=int, help="render the first frame from this world")
    p.add_argument("--poses", help="JSON trajectory file overriding the generated path")
    p.add_argument("--steps", type=int, default=8, help="total trajectory length")
    p.add_argument("--beam-width", type=int, default=3)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--cross-door", action="store_true")

    p = sub.add_parser("eval", help="re-run a rollout manifest and score it")
    p.add_argument("--manifest", required=True, help="rollout output directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out")

    p = sub.add_parser("ablate", help="train and compare model variants")
    p.add_argument("--data", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants", default="full,no_bias,no_decoupled_pe,no_error_accum")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--steps", type=int, default=1200)
    p.add_argument("--finetune-steps", type=int, default=200)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--d-e", type=int, default=64)
    p.add_argument("--blocks", type=int, default=2)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--mlp-hidden", type=int, default=256)
    p.add_argument("--rollout-frames", type=int, default=None)

    p = sub.add_parser("serve", help="run the session service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--codec", required=True)
    p.add_argument("--addr", default="127.0.0.1:8000")
    p.add_argument("--out")
    p.add_argument("--ui-dir", help="serve the explorer UI from this directory")
    return parser


def model_config_for(codec: Codec, file_cfg: dict, **overrides) -> ModelConfig:
    base = ModelConfig().to_dict()
    base["tokens_per_frame"] = codec.config.tokens_per_frame
    base["vocab"] = codec.config.codebook_size
    base.update(file_cfg.get("model", {}))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ModelConfig(**base)


def cmd_gen_data(args, file_cfg) -> int:
    data_cfg = dict(file_cfg.get("data", {}))
    manifest = wg.export_dataset(
        args.out,
        n_train_scenes=args.train_scenes,
        n_test_scenes=args.test_scenes,
        episodes_per_scene=args.episodes,
        t_steps=args.steps,
        height=args.height,
        width=args.width,
        base_seed=args.seed,
        **data_cfg,
    )
    write_echo(args.out, "gen-data", {**vars(args), "scenes": len(manifest["scenes"])})
    n_eps = sum(len(s["episodes"]) for s in manifest["scenes"])
    print(f"wrote {n_eps} episodes across {len(manifest['scenes'])} scenes to {args.out}")
    return 0


def load_training_frames(data_dir, split="train") -> np.ndarray:
    frames = [f for _, eps_frames, _, _ in wg.iter_episodes(data_dir, split=split)
              for f in eps_frames]
    return np.stack(frames).astype(np.float32)


def cmd_train_codec(args, file_cfg) -> int:
    require_file(Path(args.data) / "manifest.json", "dataset manifest")
    frames = load_training_frames(args.data)
    manifest = wg.load_manifest(args.data)
    cfg_dict = {"height": manifest["height"], "width": manifest["width"]}
    cfg_dict.update(file_cfg.get("codec", {}))
    config = CodecConfig(**cfg_dict)
    codec, history = train_codec(
        frames, config, steps=args.steps, batch_size=args.batch, lr=args.lr, seed=args.seed
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    codec.save(out / "codec.ckpt")
    (out / "codec_history.json").write_text(json.dumps(history, indent=1))
    write_echo(args.out, "train-codec", {**vars(args), "codec": config.to_dict()})
    usage = history[-1]["usage"]
    print(f"codec saved to {out / 'codec.ckpt'} (final usage {usage:.2f})")
    return 0


def cmd_train_model(args, file_cfg) -> int:
    require_file(Path(args.data) / "manifest.json", "dataset manifest")
    codec = Codec.load(require_file(args.codec, "codec checkpoint"))
    model_cfg = model_config_for(codec, file_cfg)
    train_cfg = TrainConfig(
        batch_size=args.batch,
        total_steps=args.steps,
        lr=args.lr,
        weight_decay=file_cfg.get("train", {}).get("weight_decay", 0.01),
        seed=args.seed,
        clip_len=model_cfg.clip_len,
        finetune_steps=args.finetune_steps,
    )
    dataset = ClipDataset.from_directory(args.data, codec, split="train",
                                         include_diagonal=model_cfg.bias_on_diagonal)
    model = SceneTransformer(model_cfg, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history = train_model(model, dataset, train_cfg, codec=codec,
                          log_path=out / "train_log.jsonl")
    save_checkpoint(model, out / "model.ckpt", train_cfg, step=train_cfg.total_steps)
    write_echo(args.out, "train-model",
               {**vars(args), "model": model_cfg.to_dict(), "train": train_cfg.to_dict()})
    print(f"model saved to {out / 'model.ckpt'} (final loss {history[-1]['loss']:.4f})")
    return 0


def build_rollout_inputs(args, codec):
    """First frame, intrinsics, and pose list for a rollout command."""
    cfgc = codec.config
    if args.poses:
        doc = json.loads(require_file(args.poses, "pose file").read_text())
        k, poses = geo.trajectory_from_json(doc)
    else:
        if args.scene_seed is None:
            print("error: rollout needs --scene-seed or --poses", file=sys.stderr)
            raise SystemExit(2)
        k = geo.Intrinsics.from_fov(cfgc.width, cfgc.height)
        scene = wg.generate_scene(args.scene_seed)
        traj = wg.generate_trajectory(scene, args.scene_seed, args.steps,
                                      cross_door=args.cross_door or None)
        poses = traj.poses
    if args.scene_seed is not None:
        scene = wg.generate_scene(args.scene_seed)
        first = wg.render_antialiased(scene, poses[0], k, cfgc.height, cfgc.width)
    else:
        print("error: --poses rollouts still need --scene-seed for the first frame",
              file=sys.stderr)
        raise SystemExit(2)
    return first.astype(np.float32), k, poses


def cmd_rollout(args, file_cfg) -> int:
    model = SceneTransformer.load(require_file(args.checkpoint, "model checkpoint"))
    codec = Codec.load(require_file(args.codec, "codec checkpoint"))
    first, k, poses = build_rollout_inputs(args, codec)
    cfg = RolloutConfig(
        total_steps=len(poses), beam_width=args.beam_width,
        temperature=args.temperature, seed=args.seed,
    )
    results = rollout(model, codec, k, first, poses, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wg.save_png(out / "frame_0000.png", first)
    for i, r in enumerate(results, start=1):
        wg.save_png(out / f"frame_{i:04d}.png", r.frame)
    write_token_stream(out / "tokens.json", np.stack([r.tokens for r in results]),
                       codec, ckpt.file_hash(args.codec))
    manifest = {
        "seed": args.seed,
        "scene_seed": args.scene_seed,
        "checkpoint_hash": ckpt.file_hash(args.checkpoint),
        "codec_hash": ckpt.file_hash(args.codec),
        "beam_width": args.beam_width,
        "temperature": args.temperature,
        "beam_scores": [r.score for r in results],
        "trajectory": geo.trajectory_to_json(k, poses),
        "frames": [f"frame_{i:04d}.png" for i in range(len(poses))],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    write_echo(args.out, "rollout", vars(args))
    print(f"wrote {len(poses)} frames + manifest to {out}")
    return 0


def cmd_eval(args, file_cfg) -> int:
    man_dir = Path(args.manifest)
    manifest = json.loads(require_file(man_dir / "manifest.json", "rollout manifest").read_text())
    model = SceneTransformer.load(require_file(args.checkpoint, "model checkpoint"))
    codec = Codec.load(require_file(args.codec, "codec checkpoint"))
    if manifest["checkpoint_hash"] != ckpt.file_hash(args.checkpoint):
        print("error: checkpoint hash does not match the manifest", file=sys.stderr)
        return 2
    k, poses = geo.trajectory_from_json(manifest["trajectory"])
    scene = wg.generate_scene(manifest["scene_seed"])
    cfgc = codec.config
    first = wg.render_antialiased(scene, poses[0], k, cfgc.height, cfgc.width).astype(np.float32)
    cfg = RolloutConfig(total_steps=len(poses), beam_width=manifest["beam_width"],
                        temperature=manifest["temperature"], seed=manifest["seed"])
    results = rollout(model, codec, k, first, poses, cfg)
    scores = [r.score for r in results]
    exact = scores == manifest["beam_scores"]
    gt = np.stack([wg.render_antialiased(scene, p, k, cfgc.height, cfgc.width) for p in poses[1:]])
    gen = np.stack([r.frame for r in results])
    psnr_mean = float(np.mean([mt.psnr(g, t) for g, t in zip(gen, gt)]))
    fre = mt.frechet(mt.feature_stats(gen, codec), mt.feature_stats(gt, codec)) if len(
        gen) >= 2 else float("nan")
    out_dir = Path(args.out) if args.out else man_dir
    mt.write_report(out_dir / "eval.csv", [{
        "variant": "eval", "n_frames": len(gen), "psnr_mean": psnr_mean, "frechet": fre,
    }])
    write_echo(out_dir, "eval", {**vars(args), "scores_match": exact})
    print(f"beam scores match: {exact}; psnr {psnr_mean:.2f} dB; frechet {fre:.4f}")
    return 0 if exact else 1


def cmd_ablate(args, file_cfg) -> int:
    require_file(Path(args.data) / "manifest.json", "dataset manifest")
    codec = Codec.load(require_file(args.codec, "codec checkpoint"))
    base_cfg = model_config_for(
        codec, file_cfg, d_e=args.d_e, n_blocks=args.blocks, n_heads=args.heads,
        mlp_hidden=args.mlp_hidden,
    )
    train_cfg = TrainConfig(
        batch_size=args.batch, total_steps=args.steps, lr=args.lr, seed=args.seed,
        clip_len=base_cfg.clip_len, finetune_steps=args.finetune_steps,
    )
    train_set = ClipDataset.from_directory(args.data, codec, split="train")
    val_set = ClipDataset.from_directory(args.data, codec, split="test")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ablation_run(
        base_cfg, train_set, val_set, codec, train_cfg,
        variants=args.variants.split(","),
        seeds=[int(s) for s in args.seeds.split(",")],
        rollout_frames=args.rollout_frames,
        out_csv=out / "ablation.csv",
    )
    write_echo(args.out, "ablate", {**vars(args), "model": base_cfg.to_dict()})
    for row in rows:
        print(
            f"{row['variant']:>16} seed {row['seed']}: val_ce {row['val_ce']:.4f} "
            f"rollout_ce {row['rollout_ce']:.4f} psnr {row['rollout_psnr']:.2f} "
            f"frechet {row['frechet']:.4f}"
        )
    return 0


def cmd_serve(args, file_cfg) -> int:
    import uvicorn

    from .service import Engine, create_app

    model = SceneTransformer.load(require_file(args.checkpoint, "model checkpoint"))
    codec = Codec.load(require_file(args.codec, "codec checkpoint"))
    engine = Engine(model, codec, checkpoint_hash=ckpt.file_hash(args.checkpoint))
    app = create_app(engine, ui_dir=args.ui_dir)
    addr = os.environ.get("ROOMWALK_ADDR", args.addr)
    host, _, port = addr.partition(":")
    if args.out:
        write_echo(args.out, "serve", {**vars(args), "addr": addr})
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port or 8000))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-codec": cmd_train_codec,
    "train-model": cmd_train_model,
    "rollout": cmd_rollout,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    file_cfg = load_config_file(args.config)
    return COMMANDS[args.command](args, file_cfg)


if __name__ == "__main__":
    sys.exit(main())
