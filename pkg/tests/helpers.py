"""Shared test utilities: random rotations and the homogeneous-matrix oracle."""

import numpy as np

from roomwalk import geometry as geo


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, -1] *= -1.0
    return q


def random_pose(rng, span=5.0):
    return geo.CameraPose(random_rotation(rng), rng.uniform(-span, span, size=3))


def random_relative(rng, span=5.0):
    return geo.RelativeTransform(random_rotation(rng), rng.uniform(-span, span, size=3))


def pose_to_homogeneous(pose):
    m = np.eye(4)
    m[:3, :3] = pose.rotation
    m[:3, 3] = pose.translation
    return m


def rel_to_homogeneous(rel):
    m = np.eye(4)
    m[:3, :3] = rel.rotation
    m[:3, 3] = rel.translation
    return m


def compose_oracle(pose, rel):
    """Independent 4x4 check: cam-to-world of the composed pose."""
    return pose_to_homogeneous(pose) @ np.linalg.inv(rel_to_homogeneous(rel))


def relative_oracle(src, dst):
    """Independent 4x4 check: src-camera coords to dst-camera coords."""
    return np.linalg.inv(pose_to_homogeneous(dst)) @ pose_to_homogeneous(src)
