"""Pinhole cameras, rigid pose algebra, and camera flattening.

Conventions used throughout the package:

* World frame: right-handed, y up.  Camera positions live at a fixed eye
  height above the floor plane (y = 0).
* ``CameraPose`` stores the camera-to-world rotation ``R`` and the camera
  origin ``t`` in world coordinates: a point ``p_cam`` in camera coordinates
  sits at ``R @ p_cam + t`` in the world.
* Camera axes: x right (image u), y down (image v), z forward.  A pixel
  ``(u, v)`` back-projects to the camera-frame direction
  ``((u - cx) / fx, (v - cy) / fy, 1)``.
* ``RelativeTransform`` maps points between camera frames:
  ``p_dst = R @ p_src + t`` for a point expressed in each camera's frame.

Flat camera layout (length 21 by default): row-major normalized intrinsics
(9) ++ row-major relative rotation (9) ++ relative translation (3).  The
intrinsics rows holding pixel-unit entries (fx, cx / fy, cy) are divided by
the image width so the vector is resolution independent; the bottom row
stays (0, 0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORTHO_TOL = 1e-9
FLAT_LEN = 21


class GeometryError(ValueError):
    pass


def _check_rotation(r: np.ndarray, tol: float = ORTHO_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {r.shape}")
    residual = np.abs(r.T @ r - np.eye(3)).max()
    if residual > tol:
        raise GeometryError(f"rotation not orthonormal (residual {residual:.3e})")
    if not np.isclose(np.linalg.det(r), 1.0, atol=1e-6):
        raise GeometryError("rotation has determinant != +1")
    return r


def _reorthonormalize(r: np.ndarray) -> np.ndarray:
    """Project a near-rotation back onto SO(3) via SVD."""
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1.0
        out = u @ vt
    return out


def _clean_rotation(r: np.ndarray) -> np.ndarray:
    """Re-orthonormalize only when the accumulated residual demands it."""
    residual = np.abs(r.T @ r - np.eye(3)).max()
    if residual > 1e-12:
        r = _reorthonormalize(r)
    return r


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixel units; fx, fy on the diagonal, cx, cy in
    the last column, bottom row (0, 0, 1)."""

    k_matrix: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.k_matrix, dtype=np.float64)
        if k.shape != (3, 3):
            raise GeometryError(f"intrinsics must be 3x3, got {k.shape}")
        if k[0, 0] <= 0 or k[1, 1] <= 0:
            raise GeometryError("fx and fy must be positive")
        if not np.array_equal(k[2], [0.0, 0.0, 1.0]):
            raise GeometryError("intrinsics bottom row must be (0, 0, 1)")
        object.__setattr__(self, "k_matrix", k)

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float = 90.0) -> "Intrinsics":
        """Square-pixel intrinsics for a given horizontal field of view."""
        fx = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        # cx = W/2 keeps the width-normalized intrinsics identical across
        # resolutions (cx / W = 0.5 exactly).
        return cls(np.array([[fx, 0, width / 2.0], [0, fx, height / 2.0], [0, 0, 1.0]]))

    @property
    def fx(self) -> float:
        return float(self.k_matrix[0, 0])

    @property
    def fy(self) -> float:
        return float(self.k_matrix[1, 1])

    @property
    def cx(self) -> float:
        return float(self.k_matrix[0, 2])

    @property
    def cy(self) -> float:
        return float(self.k_matrix[1, 2])


@dataclass(frozen=True)
class CameraPose:
    """Camera-to-world rotation plus camera origin in world coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, x: float, y: float, z: float, yaw_rad: float) -> "CameraPose":
        """Level camera at (x, y, z) heading along (sin yaw, 0, cos yaw)."""
        s, c = np.sin(yaw_rad), np.cos(yaw_rad)
        # Columns are the camera axes in world coordinates: x right, y down,
        # z forward; determinant +1.
        r = np.array([[-c, 0.0, s], [0.0, -1.0, 0.0], [s, 0.0, c]])
        return cls(r, np.array([x, y, z], dtype=np.float64))

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[:, 2].copy()

    @property
    def right(self) -> np.ndarray:
        return self.rotation[:, 0].copy()


@dataclass(frozen=True)
class RelativeTransform:
    """Rigid map between camera frames: p_dst = rotation @ p_src + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RelativeTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class FlatCamera:
    """Camera conditioning vector: normalized K ++ relative R ++ relative t."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


def compose(a: CameraPose, b_relative_to_a: RelativeTransform) -> CameraPose:
    """World pose of the camera reached by applying a relative transform to a.

    The relative transform maps a-frame points into b-frame points, so
    R_b = R_a @ R_rel^T and t_b = t_a - R_b @ t_rel.
    """
    r_b = a.rotation @ b_relative_to_a.rotation.T
    t_b = a.translation - r_b @ b_relative_to_a.translation
    return CameraPose(_clean_rotation(r_b), t_b)


def relative(src: CameraPose, dst: CameraPose) -> RelativeTransform:
    """Transform taking src-camera coordinates to dst-camera coordinates."""
    r = dst.rotation.T @ src.rotation
    t = dst.rotation.T @ (src.translation - dst.translation)
    return RelativeTransform(_clean_rotation(r), t)


def chain(a: RelativeTransform, b: RelativeTransform) -> RelativeTransform:
    """Composite transform: first a (i -> j), then b (j -> k), giving i -> k."""
    r = b.rotation @ a.rotation
    t = b.rotation @ a.translation + b.translation
    return RelativeTransform(_clean_rotation(r), t)


def inverse(a: RelativeTransform) -> RelativeTransform:
    r = a.rotation.T
    return RelativeTransform(r, -(r @ a.translation))


def canonicalize(trajectory: list[CameraPose]) -> list[RelativeTransform]:
    """Relative transforms from the first pose to every later pose.

    Element l-1 is relative(pose_0, pose_l); the first frame is the anchor
    view and gets no transform of its own.
    """
    if len(trajectory) < 2:
        raise GeometryError("trajectory too short: need at least 2 poses")
    first = trajectory[0]
    return [relative(first, p) for p in trajectory[1:]]


def flatten(k: Intrinsics, rel: RelativeTransform, image_width: float = 1.0) -> FlatCamera:
    """Flatten intrinsics and a relative transform into the conditioning vector.

    The two pixel-unit intrinsics rows are divided by ``image_width`` so the
    same scene carries the same camera vector at any resolution; the bottom
    row stays (0, 0, 1).  Layout: K row-major (9), R row-major (9), t (3).
    """
    k_norm = k.k_matrix.copy()
    k_norm[0] /= image_width
    k_norm[1] /= image_width
    values = np.concatenate([k_norm.ravel(), rel.rotation.ravel(), rel.translation])
    return FlatCamera(values)


def apply_delta(pose: CameraPose, forward: float, strafe: float, yaw_deg: float) -> CameraPose:
    """Step a level camera: move along its forward/right axes, then yaw.

    Movement is confined to the horizontal plane (y component of the axes is
    dropped) so eye height is preserved; positive yaw turns toward the
    camera's right.
    """
    fwd = pose.forward
    rgt = pose.right
    fwd[1] = 0.0
    rgt[1] = 0.0
    for v in (fwd, rgt):
        n = np.linalg.norm(v)
        if n > 1e-12:
            v /= n
    position = pose.translation + forward * fwd + strafe * rgt
    yaw = np.radians(yaw_deg)
    s, c = np.sin(yaw), np.cos(yaw)
    # Rotation about world up; applied on the left so it acts in world frame.
    r_yaw = np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])
    rotation = _clean_rotation(r_yaw @ pose.rotation)
    return CameraPose(rotation, position)


def pose_to_json(pose: CameraPose) -> dict:
    return {
        "rotation": [float(v) for v in pose.rotation.ravel()],
        "translation": [float(v) for v in pose.translation],
    }


def pose_from_json(obj: dict) -> CameraPose:
    r = np.asarray(obj["rotation"], dtype=np.float64).reshape(3, 3)
    t = np.asarray(obj["translation"], dtype=np.float64)
    return CameraPose(r, t)


def trajectory_to_json(k: Intrinsics, poses: list[CameraPose]) -> dict:
    """One-trajectory pose document: intrinsics, poses, units."""
    return {
        "intrinsics": [float(v) for v in k.k_matrix.ravel()],
        "poses": [pose_to_json(p) for p in poses],
        "units": "meters",
    }


def trajectory_from_json(obj: dict) -> tuple[Intrinsics, list[CameraPose]]:
    k = Intrinsics(np.asarray(obj["intrinsics"], dtype=np.float64).reshape(3, 3))
    poses = [pose_from_json(p) for p in obj["poses"]]
    return k, poses
