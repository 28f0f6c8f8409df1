"""Train a small codec on rendered frames and inspect the reconstruction.

Run:  python3 demos/demo_codec.py      (about 2 minutes on CPU)
"""

from pathlib import Path

import numpy as np
from PIL import Image

from roomwalk import codec as cd
from roomwalk import geometry as geo
from roomwalk import metrics as mt
from roomwalk import worldgen as wg

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

k = geo.Intrinsics.from_fov(32, 32)
frames = []
for seed in range(4):
    scene = wg.generate_scene(seed)
    traj = wg.generate_trajectory(scene, seed, 8)
    frames += [wg.render(scene, p, k, 32, 32) for p in traj.poses]
frames = np.stack(frames).astype(np.float32)
print(f"training corpus: {frames.shape[0]} frames")

config = cd.CodecConfig(codebook_size=128)
codec, history = cd.train_codec(frames, config, steps=600, batch_size=16, lr=1.5e-3, seed=0)
for h in history[:: max(1, len(history) // 6)]:
    print(f"  step {h['step']:4d}  loss {h['loss']:.4f}  usage {h['usage']:.2f}")

recon = codec.reconstruct(frames[:8])
psnr = np.mean([mt.psnr(a, b) for a, b in zip(recon, frames[:8])])
print(f"reconstruction PSNR after 600 steps: {psnr:.1f} dB")

tokens = codec.tokenize(frames[0])
print(f"one frame becomes a {tokens.shape} grid of codebook indices:")
print(tokens)

side = np.concatenate([frames[:8].reshape(-1, 32, 3), recon.reshape(-1, 32, 3)], axis=1)
Image.fromarray(wg.to_uint8(side)).save(OUT / "codec_recon.png")
print(f"original vs reconstruction -> {OUT / 'codec_recon.png'}")
