"""Pose algebra in five minutes: compose, relative, canonicalize, flatten.

Run:  python3 demos/demo_geometry.py
"""

import numpy as np

from roomwalk import geometry as geo

np.set_printoptions(precision=3, suppress=True)

# a camera at the origin facing +z, and one a step forward and turned right
a = geo.CameraPose.from_yaw(0.0, 1.5, 0.0, 0.0)
b = geo.apply_delta(a, forward=0.5, strafe=0.0, yaw_deg=30.0)

rel = geo.relative(a, b)
print("relative(a, b) rotation:\n", rel.rotation)
print("relative(a, b) translation:", rel.translation)

# composing a with that relative transform lands back on b
b2 = geo.compose(a, rel)
print("compose recovers b:", np.allclose(b2.translation, b.translation, atol=1e-12))

# a short walk, canonicalized to its first pose
walk = [a]
for _ in range(4):
    walk.append(geo.apply_delta(walk[-1], 0.25, 0.0, 15.0))
rels = geo.canonicalize(walk)
print("\ncanonical translations (camera-frame forward is -z in each target frame):")
for i, r in enumerate(rels, start=2):
    print(f"  frame {i}: t = {r.translation}")

# the conditioning vector the model actually sees
k = geo.Intrinsics.from_fov(32, 32)
flat = geo.flatten(k, rels[0], image_width=32)
print(f"\nflattened camera ({len(flat)} values):")
print(flat.values)
