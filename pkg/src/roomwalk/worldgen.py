"""Procedural multi-room worlds and a deterministic software raycaster.

Worlds are unions of axis-aligned rooms (floor rectangles with a shared wall
height) connected by doorways.  Every surface carries a procedural checker or
stripe texture with a period in world units, so texture phase is a strong
visual cue for camera motion.  Rendering is flat-shaded, pure, and
deterministic: a pixel (u, v) back-projects through the pinhole model, the
ray is intersected against every compiled surface rectangle, and the nearest
front-facing hit is shaded by its texture.

Trajectories are collision-checked random walks at fixed eye height with
discrete yaw steps, optionally steered through a doorway into another room.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import geometry as geo

EYE_HEIGHT = 1.5
WALL_HEIGHT = 2.5
DOOR_HEIGHT = 2.0
DOOR_WIDTH = 0.9
CLEARANCE = 0.2  # minimum camera distance from solid walls

# Patterns pair a palette color with this shared neutral, keeping the space of
# local texture patches linear (not quadratic) in the palette size.
NEUTRAL = (0.82, 0.82, 0.78)

# Muted palette, pre-blended toward the neutral: moderate edge contrast keeps
# texture phase clearly visible while staying inside the codec's quantization
# budget (squared edge error scales with contrast squared).
_BASE_COLORS = np.array(
    [
        [0.85, 0.30, 0.25], [0.25, 0.60, 0.85], [0.30, 0.75, 0.40],
        [0.90, 0.75, 0.25], [0.65, 0.35, 0.80], [0.90, 0.55, 0.20],
        [0.20, 0.70, 0.70], [0.85, 0.45, 0.60], [0.55, 0.70, 0.25],
        [0.35, 0.40, 0.85], [0.75, 0.75, 0.70], [0.40, 0.30, 0.25],
        [0.15, 0.45, 0.35], [0.70, 0.20, 0.30], [0.25, 0.25, 0.55],
        [0.80, 0.65, 0.50],
    ]
)
PALETTE = 0.7 * _BASE_COLORS + 0.3 * np.asarray(NEUTRAL)


class WorldError(RuntimeError):
    pass


@dataclass(frozen=True)
class Texture:
    kind: str  # "checker" or "stripe"
    period: float
    color_a: tuple
    color_b: tuple

    def __post_init__(self):
        if self.period <= 0:
            raise WorldError("texture period must be positive")


@dataclass(frozen=True)
class Room:
    x0: float
    z0: float
    x1: float
    z1: float

    def contains(self, x, z, margin=0.0):
        return (
            (x >= self.x0 + margin) & (x <= self.x1 - margin)
            & (z >= self.z0 + margin) & (z <= self.z1 - margin)
        )

    @property
    def center(self):
        return np.array([(self.x0 + self.x1) / 2, (self.z0 + self.z1) / 2])


@dataclass(frozen=True)
class Doorway:
    room_a: int
    room_b: int
    axis: int       # 0: opening in an x-const wall; 2: z-const wall
    coord: float    # wall plane coordinate
    lo: float       # opening interval along the wall direction
    hi: float


@dataclass
class SceneSpec:
    seed: int
    rooms: list[Room]
    doorways: list[Doorway]
    wall_height: float = WALL_HEIGHT
    floor_tex: list[Texture] = field(default_factory=list)
    ceil_tex: list[Texture] = field(default_factory=list)
    wall_tex: list[Texture] = field(default_factory=list)
    _compiled: dict | None = field(default=None, repr=False)

    def room_of(self, x, z) -> int:
        for i, r in enumerate(self.rooms):
            if r.contains(x, z):
                return i
        return -1


# -- scene generation -------------------------------------------------------------


def _random_texture(rng, kinds=("checker", "stripe"), solid_prob=0.0) -> Texture:
    ia = int(rng.integers(0, len(PALETTE)))
    kind = kinds[int(rng.integers(0, len(kinds)))]
    # periods comparable to room scale: texture cells stay several pixels wide
    # at 32x32 so the pattern reads as structure rather than sampling noise
    period = float(rng.uniform(1.2, 2.4))
    color_b = tuple(PALETTE[ia]) if rng.random() < solid_prob else NEUTRAL
    return Texture(kind, period, tuple(PALETTE[ia]), color_b)


def _overlaps(a: Room, b: Room, gap: float = 0.0) -> bool:
    return not (
        a.x1 <= b.x0 + gap or b.x1 <= a.x0 + gap or a.z1 <= b.z0 + gap or b.z1 <= a.z0 + gap
    )


def generate_scene(seed: int) -> SceneSpec:
    """Deterministic 2-4 room world with at least one doorway."""
    rng = np.random.default_rng(seed)
    n_rooms = int(rng.integers(2, 5))
    rooms = [Room(0.0, 0.0, float(rng.uniform(3.0, 5.5)), float(rng.uniform(3.0, 5.5)))]
    doorways: list[Doorway] = []
    while len(rooms) < n_rooms:
        placed = False
        for _ in range(40):
            base_i = int(rng.integers(0, len(rooms)))
            base = rooms[base_i]
            w = float(rng.uniform(2.8, 5.0))
            d = float(rng.uniform(2.8, 5.0))
            side = int(rng.integers(0, 4))  # +x, -x, +z, -z
            if side in (0, 1):
                x0 = base.x1 if side == 0 else base.x0 - w
                z0 = float(rng.uniform(base.z0 - d + 1.6, base.z1 - 1.6))
                cand = Room(x0, z0, x0 + w, z0 + d)
                shared = (max(base.z0, cand.z0), min(base.z1, cand.z1))
                axis, coord = 0, (base.x1 if side == 0 else base.x0)
            else:
                z0 = base.z1 if side == 2 else base.z0 - d
                x0 = float(rng.uniform(base.x0 - w + 1.6, base.x1 - 1.6))
                cand = Room(x0, z0, x0 + w, z0 + d)
                shared = (max(base.x0, cand.x0), min(base.x1, cand.x1))
                axis, coord = 2, (base.z1 if side == 2 else base.z0)
            if shared[1] - shared[0] < DOOR_WIDTH + 0.8:
                continue
            if any(_overlaps(cand, r) for r in rooms):
                continue
            center = float(rng.uniform(shared[0] + 0.4 + DOOR_WIDTH / 2,
                                        shared[1] - 0.4 - DOOR_WIDTH / 2))
            doorways.append(
                Doorway(base_i, len(rooms), axis, coord,
                        center - DOOR_WIDTH / 2, center + DOOR_WIDTH / 2)
            )
            rooms.append(cand)
            placed = True
            break
        if not placed:
            break
    scene = SceneSpec(seed=seed, rooms=rooms, doorways=doorways)
    for _ in rooms:
        # floors carry checker phase (the strongest motion cue), walls carry
        # stripes, ceilings stay solid so frames remain quantizable
        scene.floor_tex.append(_random_texture(rng, kinds=("checker",)))
        scene.ceil_tex.append(_random_texture(rng, solid_prob=1.0))
        scene.wall_tex.append(_random_texture(rng, kinds=("stripe",), solid_prob=0.3))
    return scene


# -- surface compilation -----------------------------------------------------------

# A surface rectangle: (axis, coord, normal_sign, u_lo, u_hi, v_lo, v_hi, tex_id)
# where (u, v) are world coordinates along the two free axes:
#   axis 0 (x-const): u = z, v = y;  axis 2 (z-const): u = x, v = y
#   axis 1 (y-const): u = x, v = z


def _wall_pieces(lo, hi, holes, height):
    """Split a wall run [lo, hi] around door holes; returns (lo, hi, y0, y1)."""
    pieces = []
    holes = sorted(holes)
    cur = lo
    for a, b in holes:
        if a > cur:
            pieces.append((cur, a, 0.0, height))
        pieces.append((a, b, DOOR_HEIGHT, height))  # lintel above the door
        cur = b
    if cur < hi:
        pieces.append((cur, hi, 0.0, height))
    return pieces


def _compile(scene: SceneSpec) -> dict:
    if scene._compiled is not None:
        return scene._compiled
    rects = []   # rows: axis, coord, sign, ulo, uhi, vlo, vhi, tex
    textures = []

    def tex_id(t: Texture) -> int:
        textures.append(t)
        return len(textures) - 1

    segments = []  # walking-blocking pieces: (axis, coord, lo, hi)
    h = scene.wall_height
    for ri, room in enumerate(scene.rooms):
        f_id = tex_id(scene.floor_tex[ri])
        c_id = tex_id(scene.ceil_tex[ri])
        w_id = tex_id(scene.wall_tex[ri])
        rects.append((1, 0.0, +1, room.x0, room.x1, room.z0, room.z1, f_id))
        rects.append((1, h, -1, room.x0, room.x1, room.z0, room.z1, c_id))
        sides = [
            (0, room.x0, +1, room.z0, room.z1),  # west wall, normal +x into room
            (0, room.x1, -1, room.z0, room.z1),
            (2, room.z0, +1, room.x0, room.x1),
            (2, room.z1, -1, room.x0, room.x1),
        ]
        for axis, coord, sign, lo, hi in sides:
            holes = [
                (d.lo, d.hi)
                for d in scene.doorways
                if d.axis == axis and abs(d.coord - coord) < 1e-9
                and ri in (d.room_a, d.room_b) and d.lo >= lo - 1e-9 and d.hi <= hi + 1e-9
            ]
            for a, b, y0, y1 in _wall_pieces(lo, hi, holes, h):
                rects.append((axis, coord, sign, a, b, y0, y1, w_id))
                if y0 == 0.0:  # full-height piece blocks walking
                    segments.append((axis, coord, a, b))

    rect_arr = np.array([r[:7] for r in rects], dtype=np.float64)
    tex_kind = np.array([0 if textures[r[7]].kind == "checker" else 1 for r in rects])
    tex_period = np.array([textures[r[7]].period for r in rects])
    tex_a = np.array([textures[r[7]].color_a for r in rects])
    tex_b = np.array([textures[r[7]].color_b for r in rects])
    compiled = {
        "rect": rect_arr,
        "tex_kind": tex_kind,
        "tex_period": tex_period,
        "tex_a": tex_a,
        "tex_b": tex_b,
        "segments": np.array(segments, dtype=np.float64).reshape(-1, 4),
    }
    scene._compiled = compiled
    return compiled


# -- collision ------------------------------------------------------------------------


def in_free_space(scene: SceneSpec, x: float, z: float) -> bool:
    return any(r.contains(x, z) for r in scene.rooms)


def walkable(scene: SceneSpec, x: float, z: float, radius: float = CLEARANCE) -> bool:
    """True when a disc of the given radius fits in free space at (x, z)."""
    if not in_free_space(scene, x, z):
        return False
    seg = _compile(scene)["segments"]
    if seg.shape[0] == 0:
        return True
    # distance from the point to each axis-aligned wall segment
    perp = np.where(seg[:, 0] == 0, x - seg[:, 1], z - seg[:, 1])
    along = np.where(seg[:, 0] == 0, z, x)
    over = np.maximum(seg[:, 2] - along, along - seg[:, 3])
    over = np.maximum(over, 0.0)
    dist = np.sqrt(perp**2 + over**2)
    return bool(dist.min() >= radius)


# -- rendering --------------------------------------------------------------------------


def render(scene: SceneSpec, pose: geo.CameraPose, k: geo.Intrinsics, h: int, w: int) -> np.ndarray:
    """Raycast one frame; returns float image [h, w, 3] in [0, 1]."""
    x, _, z = pose.translation
    if not in_free_space(scene, x, z):
        raise WorldError("camera in solid geometry")
    comp = _compile(scene)
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs = np.stack(
        [(u.ravel() - k.cx) / k.fx, (v.ravel() - k.cy) / k.fy, np.ones(h * w)], axis=1
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs @ pose.rotation.T
    origin = pose.translation

    rect = comp["rect"]
    n_rays, n_rects = dirs.shape[0], rect.shape[0]
    best_t = np.full(n_rays, np.inf)
    best_i = np.full(n_rays, -1, dtype=np.int64)
    axes = rect[:, 0].astype(np.int64)
    uv_axes = {0: (2, 1), 1: (0, 2), 2: (0, 1)}
    for axis in (0, 1, 2):
        sel = np.nonzero(axes == axis)[0]
        if sel.size == 0:
            continue
        sub = rect[sel]
        d_a = dirs[:, axis][:, None]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (sub[None, :, 1] - origin[axis]) / d_a
            front = d_a * sub[None, :, 2] < 0  # ray runs against the normal
            ua, va = uv_axes[axis]
            pu = origin[ua] + t * dirs[:, ua][:, None]
            pv = origin[va] + t * dirs[:, va][:, None]
            ok = (
                front
                & (t > 1e-9)
                & (pu >= sub[None, :, 3]) & (pu <= sub[None, :, 4])
                & (pv >= sub[None, :, 5]) & (pv <= sub[None, :, 6])
            )
        t = np.where(ok, t, np.inf)
        j = np.argmin(t, axis=1)
        tm = t[np.arange(n_rays), j]
        better = tm < best_t
        best_t = np.where(better, tm, best_t)
        best_i = np.where(better, sel[j], best_i)

    img = np.zeros((n_rays, 3))
    hit = best_i >= 0
    if hit.any():
        ridx = best_i[hit]
        sub = rect[ridx]
        ax = sub[:, 0].astype(np.int64)
        th = best_t[hit]
        pts = origin[None, :] + th[:, None] * dirs[hit]
        ua = np.array([2, 0, 0])[ax]
        va = np.array([1, 2, 1])[ax]
        pu = pts[np.arange(pts.shape[0]), ua]
        pv = pts[np.arange(pts.shape[0]), va]
        period = comp["tex_period"][ridx]
        cu = np.floor(pu / period).astype(np.int64)
        cv = np.floor(pv / period).astype(np.int64)
        phase = np.where(comp["tex_kind"][ridx] == 0, (cu + cv) % 2, cu % 2)
        color = np.where(phase[:, None] == 0, comp["tex_a"][ridx], comp["tex_b"][ridx])
        img[hit] = color
    return img.reshape(h, w, 3)


def render_antialiased(
    scene: SceneSpec, pose: geo.CameraPose, k: geo.Intrinsics, h: int, w: int,
    factor: int = 3,
) -> np.ndarray:
    """Supersampled render: raycast at factor x resolution, box-downsample.

    Point-sampled textures alias badly at 32x32; averaging a 2x render keeps
    the image a smooth, learnable function of the camera.
    """
    k_hi = geo.Intrinsics(k.k_matrix * np.array([[factor], [factor], [1.0]]))
    hi = render(scene, pose, k_hi, h * factor, w * factor)
    return hi.reshape(h, factor, w, factor, 3).mean(axis=(1, 3))


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64) / 255.0


def save_png(path, frame: np.ndarray) -> None:
    Image.fromarray(to_uint8(frame)).save(path, format="PNG")


def load_png(path) -> np.ndarray:
    return from_uint8(np.asarray(Image.open(path).convert("RGB")))


# -- trajectories -----------------------------------------------------------------------


@dataclass
class Trajectory:
    poses: list[geo.CameraPose]
    step_length: float
    yaw_step_deg: float
    cross_door: bool
    seed: int


def _sample_point(scene, rng, radius, near=None, spread=1.0):
    for _ in range(400):
        if near is not None:
            x = near[0] + rng.uniform(-spread, spread)
            z = near[1] + rng.uniform(-spread, spread)
        else:
            room = scene.rooms[int(rng.integers(0, len(scene.rooms)))]
            x = rng.uniform(room.x0, room.x1)
            z = rng.uniform(room.z0, room.z1)
        if walkable(scene, x, z, radius):
            return np.array([x, z])
    return None


def _door_waypoints(door: Doorway) -> tuple[np.ndarray, np.ndarray]:
    mid = (door.lo + door.hi) / 2.0
    if door.axis == 0:
        a = np.array([door.coord - 0.55, mid])
        b = np.array([door.coord + 0.55, mid])
    else:
        a = np.array([mid, door.coord - 0.55])
        b = np.array([mid, door.coord + 0.55])
    return a, b


def generate_trajectory(
    scene: SceneSpec,
    seed: int,
    t_steps: int,
    step_length: float = 0.25,
    yaw_step_deg: float = 15.0,
    cross_door: bool | None = None,
) -> Trajectory:
    """Collision-free walk of t_steps poses; every pose keeps CLEARANCE from walls."""
    if t_steps < 2:
        raise WorldError("trajectory needs at least 2 poses")
    base_rng = np.random.default_rng(seed)
    want_cross = bool(base_rng.random() < 0.5) if cross_door is None else cross_door
    if want_cross and not scene.doorways:
        want_cross = False
    for attempt in range(100):
        rng = np.random.default_rng((seed, attempt))
        traj = _try_walk(scene, rng, t_steps, step_length, yaw_step_deg, want_cross)
        if traj is not None:
            return Trajectory(traj, step_length, yaw_step_deg, want_cross, seed)
    raise WorldError(f"no valid trajectory found for seed {seed}")


def _try_walk(scene, rng, t_steps, step, yaw_step, want_cross):
    margin = CLEARANCE + 0.05
    waypoints = []
    if want_cross:
        door = scene.doorways[int(rng.integers(0, len(scene.doorways)))]
        a, b = _door_waypoints(door)
        if rng.random() < 0.5:
            a, b = b, a
        start = _sample_point(scene, rng, margin, near=a, spread=1.2)
        waypoints = [a, b, _sample_point(scene, rng, margin, near=b, spread=1.5)]
        waypoints = [w for w in waypoints if w is not None]
    else:
        start = _sample_point(scene, rng, margin)
        goal = _sample_point(scene, rng, margin)
        if goal is not None:
            waypoints = [goal]
    if start is None:
        return None
    heading = rng.uniform(0.0, 2 * np.pi)
    pos = start.copy()
    poses = [geo.CameraPose.from_yaw(pos[0], EYE_HEIGHT, pos[1], heading)]
    yaw_rad = np.radians(yaw_step)
    for _ in range(t_steps - 1):
        if waypoints and np.linalg.norm(waypoints[0] - pos) < 0.45:
            waypoints.pop(0)
        if not waypoints:
            nxt = _sample_point(scene, rng, margin)
            if nxt is not None:
                waypoints = [nxt]
        moved = False
        # steer up to one yaw step toward the waypoint, then walk; fan out if blocked
        offsets = [0.0]
        for m in range(1, 13):
            offsets.extend([m * yaw_rad, -m * yaw_rad])
        if waypoints:
            want = np.arctan2(waypoints[0][0] - pos[0], waypoints[0][1] - pos[1])
            diff = (want - heading + np.pi) % (2 * np.pi) - np.pi
            turn = np.clip(diff, -yaw_rad, yaw_rad)
            if abs(diff) < yaw_rad:
                turn = diff
        else:
            turn = 0.0
        for off in offsets:
            cand_heading = heading + turn + off
            nx = pos[0] + step * np.sin(cand_heading)
            nz = pos[1] + step * np.cos(cand_heading)
            if walkable(scene, nx, nz, CLEARANCE):
                heading = cand_heading
                pos = np.array([nx, nz])
                moved = True
                break
        if not moved:
            return None
        poses.append(geo.CameraPose.from_yaw(pos[0], EYE_HEIGHT, pos[1], heading))
    if want_cross:
        start_room = scene.room_of(poses[0].translation[0], poses[0].translation[2])
        rooms = {scene.room_of(p.translation[0], p.translation[2]) for p in poses}
        if rooms - {start_room, -1} == set():
            return None
    return poses


# -- dataset export ------------------------------------------------------------------------


def export_dataset(
    out_dir,
    n_train_scenes: int,
    n_test_scenes: int,
    episodes_per_scene: int,
    t_steps: int,
    height: int,
    width: int,
    base_seed: int = 0,
    hfov_deg: float = 90.0,
    step_length: float = 0.25,
    yaw_step_deg: float = 15.0,
    cross_door_prob: float = 0.5,
) -> dict:
    """Render (frames, poses) episodes to disk; returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    k = geo.Intrinsics.from_fov(width, height, hfov_deg)
    manifest = {
        "height": height,
        "width": width,
        "hfov_deg": hfov_deg,
        "intrinsics": [float(x) for x in k.k_matrix.ravel()],
        "step_length": step_length,
        "yaw_step_deg": yaw_step_deg,
        "eye_height": EYE_HEIGHT,
        "base_seed": base_seed,
        "scenes": [],
    }
    n_total = n_train_scenes + n_test_scenes
    for i in range(n_total):
        scene_seed = base_seed + i
        split = "train" if i < n_train_scenes else "test"
        scene = generate_scene(scene_seed)
        scene_rec = {"scene_seed": scene_seed, "split": split, "episodes": []}
        for e in range(episodes_per_scene):
            traj_seed = scene_seed * 10_000 + e
            rng = np.random.default_rng((base_seed, scene_seed, e))
            cross = bool(rng.random() < cross_door_prob) and bool(scene.doorways)
            traj = generate_trajectory(
                scene, traj_seed, t_steps, step_length, yaw_step_deg, cross_door=cross
            )
            ep_dir = out_dir / f"scene_{scene_seed:05d}" / f"episode_{e:03d}"
            ep_dir.mkdir(parents=True, exist_ok=True)
            for fi, pose in enumerate(traj.poses):
                save_png(
                    ep_dir / f"frame_{fi:04d}.png",
                    render_antialiased(scene, pose, k, height, width),
                )
            doc = geo.trajectory_to_json(k, traj.poses)
            (ep_dir / "poses.json").write_text(json.dumps(doc))
            scene_rec["episodes"].append(
                {
                    "traj_seed": traj_seed,
                    "dir": str(ep_dir.relative_to(out_dir)),
                    "T": t_steps,
                    "cross_door": traj.cross_door,
                }
            )
        manifest["scenes"].append(scene_rec)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(data_dir) -> dict:
    return json.loads((Path(data_dir) / "manifest.json").read_text())


def iter_episodes(data_dir, split: str | None = None):
    """Yields (episode_record, frames [T,H,W,3] float, intrinsics, poses)."""
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    for scene_rec in manifest["scenes"]:
        if split is not None and scene_rec["split"] != split:
            continue
        for ep in scene_rec["episodes"]:
            ep_dir = data_dir / ep["dir"]
            k, poses = geo.trajectory_from_json(json.loads((ep_dir / "poses.json").read_text()))
            frames = np.stack(
                [load_png(ep_dir / f"frame_{fi:04d}.png") for fi in range(ep["T"])]
            )
            yield ep, frames, k, poses
