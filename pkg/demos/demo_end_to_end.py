"""Miniature end-to-end run: world -> codec -> transformer -> rollout.

Overfits a small model on two trajectories and rolls it out along one of
them, saving generated frames next to the ground truth.

Run:  python3 demos/demo_end_to_end.py      (about 5 minutes on CPU)
"""

import time
from pathlib import Path

import numpy as np
from PIL import Image

from roomwalk import codec as cd
from roomwalk import geometry as geo
from roomwalk import metrics as mt
from roomwalk import sampler as sp
from roomwalk import trainer as trn
from roomwalk import transformer as tr
from roomwalk import worldgen as wg

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

# 1. render two short trajectories in one world
k = geo.Intrinsics.from_fov(32, 32)
scene = wg.generate_scene(seed=5)
episodes = []
for e in range(2):
    traj = wg.generate_trajectory(scene, 50 + e, 6)
    frames = np.stack([wg.render(scene, p, k, 32, 32) for p in traj.poses]).astype(np.float32)
    episodes.append((frames, traj.poses))
print(f"rendered {sum(len(f) for f, _ in episodes)} frames")

# 2. codec: images <-> token grids
all_frames = np.concatenate([f for f, _ in episodes])
codec, _ = cd.train_codec(all_frames, cd.CodecConfig(codebook_size=128),
                          steps=500, batch_size=12, lr=1.5e-3, seed=0)
print("codec trained")

# 3. a small camera-conditioned transformer, overfit on these clips
cfg = tr.ModelConfig(d_e=64, n_heads=2, n_blocks=2, mlp_hidden=256,
                     vocab=128, tokens_per_frame=64)
model = tr.SceneTransformer(cfg, seed=0)
dataset = trn.ClipDataset([
    trn.Episode(
        tokens=codec.tokenize(frames).reshape(len(frames), -1),
        frames=frames, poses=poses, intrinsics=k, width=32,
    )
    for frames, poses in episodes
])
tcfg = trn.TrainConfig(batch_size=4, total_steps=400, lr=1e-3, seed=0,
                       clip_len=3, finetune_steps=0, log_every=100)
t0 = time.time()
history = trn.train_model(model, dataset, tcfg)
print(f"model trained in {time.time() - t0:.0f}s; "
      f"loss {history[0]['loss']:.2f} -> {history[-1]['loss']:.3f}")

# 4. teacher-free rollout along the first trajectory
frames, poses = episodes[0]
results = sp.rollout(model, codec, k, frames[0], list(poses),
                     sp.RolloutConfig(total_steps=len(poses), beam_width=3))
psnrs = [mt.psnr(r.frame, frames[t]) for t, r in enumerate(results, start=1)]
print("per-frame PSNR vs ground truth:", " ".join(f"{p:.1f}" for p in psnrs))

strip = np.concatenate(
    [np.concatenate([frames[0]] + [r.frame for r in results], axis=1),
     np.concatenate(list(frames), axis=1)], axis=0
)
Image.fromarray(wg.to_uint8(strip)).save(OUT / "rollout_vs_truth.png")
print(f"generated (top) vs ground truth (bottom) -> {OUT / 'rollout_vs_truth.png'}")
