"""PSNR and the Frechet proxy on controlled distortions.

Run:  python3 demos/demo_metrics.py
"""

import numpy as np

from roomwalk import codec as cd
from roomwalk import geometry as geo
from roomwalk import metrics as mt
from roomwalk import worldgen as wg

k = geo.Intrinsics.from_fov(32, 32)
scene = wg.generate_scene(2)
traj = wg.generate_trajectory(scene, 0, 12)
frames = np.stack([wg.render(scene, p, k, 32, 32) for p in traj.poses]).astype(np.float32)

print("PSNR under growing uniform noise:")
rng = np.random.default_rng(0)
for amp in (0.0, 0.02, 0.05, 0.1, 0.2):
    noisy = np.clip(frames[0] + rng.uniform(-amp, amp, frames[0].shape), 0, 1)
    print(f"  amplitude {amp:4.2f}: {mt.psnr(frames[0], noisy):6.2f} dB")

# an untrained codec still gives usable features for a qualitative check
codec = cd.Codec(cd.CodecConfig(), seed=0)
clean = mt.feature_stats(frames, codec)
print("\nFrechet proxy between the clean walk and shifted copies of itself:")
for shift in (0.0, 0.05, 0.15, 0.3):
    moved = np.clip(frames + shift, 0, 1).astype(np.float32)
    print(f"  brightness shift {shift:4.2f}: {mt.frechet(clean, mt.feature_stats(moved, codec)):8.4f}")
print("\n(the proxy uses the local codec encoder, so scores only rank")
print(" variants trained on this world; they are not Inception-FID values)")
