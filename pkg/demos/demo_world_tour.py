"""Walk a camera through a procedural room world and save a contact sheet.

Run:  python3 demos/demo_world_tour.py
Outputs land in demos/out/.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from roomwalk import geometry as geo
from roomwalk import worldgen as wg

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

scene = wg.generate_scene(seed=7)
print(f"scene 7: {len(scene.rooms)} rooms, {len(scene.doorways)} doorways")
for i, room in enumerate(scene.rooms):
    print(f"  room {i}: x [{room.x0:.1f}, {room.x1:.1f}]  z [{room.z0:.1f}, {room.z1:.1f}]")

traj = wg.generate_trajectory(scene, seed=3, t_steps=16, cross_door=True)
rooms_visited = {scene.room_of(p.translation[0], p.translation[2]) for p in traj.poses}
print(f"trajectory of {len(traj.poses)} poses visits rooms {sorted(rooms_visited)}")

k = geo.Intrinsics.from_fov(64, 64)
frames = [wg.render(scene, pose, k, 64, 64) for pose in traj.poses]

cols = 8
rows = (len(frames) + cols - 1) // cols
sheet = np.ones((rows * 66, cols * 66, 3))
for i, frame in enumerate(frames):
    r, c = divmod(i, cols)
    sheet[r * 66 + 1 : r * 66 + 65, c * 66 + 1 : c * 66 + 65] = frame
Image.fromarray(wg.to_uint8(sheet)).save(OUT / "world_tour.png")
print(f"contact sheet -> {OUT / 'world_tour.png'}")

# top-down map of the walk
mapimg = np.ones((400, 400, 3))
xs = [p.translation[0] for p in traj.poses]
zs = [p.translation[2] for p in traj.poses]
x0 = min(r.x0 for r in scene.rooms) - 0.5
x1 = max(r.x1 for r in scene.rooms) + 0.5
z0 = min(r.z0 for r in scene.rooms) - 0.5
z1 = max(r.z1 for r in scene.rooms) + 0.5
scale = 390 / max(x1 - x0, z1 - z0)


def to_px(x, z):
    return int((x - x0) * scale) + 5, int((z - z0) * scale) + 5


for room in scene.rooms:
    ax, az = to_px(room.x0, room.z0)
    bx, bz = to_px(room.x1, room.z1)
    mapimg[az:bz, ax:bx] = [0.93, 0.93, 0.98]
for x, z in zip(xs, zs):
    px, pz = to_px(x, z)
    mapimg[pz - 2 : pz + 2, px - 2 : px + 2] = [0.85, 0.2, 0.2]
Image.fromarray(wg.to_uint8(mapimg)).save(OUT / "world_map.png")
print(f"top-down map -> {OUT / 'world_map.png'}")
