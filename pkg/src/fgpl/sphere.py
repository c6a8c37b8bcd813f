"""Spherical and rigid-body geometry primitives.

Conventions: line segments are ``(N, 2, 3)`` arrays of (start, end); a pose
maps a world point ``p`` to the camera ray ``normalize(R @ (p - t))``.
All angles are radians except where a name says otherwise.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    AntipodalSegment,
    DegenerateConfiguration,
    DegenerateProjection,
    DegenerateSegment,
)

EPS_PROJ = 1e-6
UNIT_TOL = 1e-9

# incremented by every 3D projection call; lets callers assert a code path is projection-free
projection_stats = {"calls": 0}


def normalize(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def as_unit_vector(v, tol: float = UNIT_TOL) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != 3 or np.any(np.abs(np.linalg.norm(v, axis=-1) - 1.0) > tol):
        raise ValueError("expected unit vector(s)")
    return v


def spherical_segments(segments) -> np.ndarray:
    """Validate and return an ``(N, 2, 3)`` array of minor arcs."""
    seg = np.asarray(segments, dtype=float).reshape(-1, 2, 3)
    as_unit_vector(seg)
    c = np.einsum("ij,ij->i", seg[:, 0], seg[:, 1])
    if np.any(np.abs(c) >= 1.0 - UNIT_TOL):
        raise DegenerateSegment("segment endpoints identical or antipodal")
    return seg


def segments_3d(segments) -> np.ndarray:
    seg = np.asarray(segments, dtype=float).reshape(-1, 2, 3)
    if np.any(np.linalg.norm(seg[:, 0] - seg[:, 1], axis=-1) <= 0):
        raise DegenerateSegment("zero-length 3D segment")
    return seg


def great_circle_normals(segments) -> np.ndarray:
    seg = np.asarray(segments, dtype=float)
    return normalize(np.cross(seg[..., 0, :], seg[..., 1, :]))


def arc_lengths(segments) -> np.ndarray:
    seg = np.asarray(segments, dtype=float)
    return np.arccos(np.clip(np.einsum("...i,...i->...", seg[..., 0, :], seg[..., 1, :]), -1.0, 1.0))


def spherical_distance(a, b):
    """Great-circle distance between unit vectors (broadcasts)."""
    dot = np.einsum("...i,...i->...", np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return np.arccos(np.clip(dot, -1.0, 1.0))


def segment_distance(x, segment) -> float:
    """Distance from a unit vector to the closest point of a minor arc."""
    seg = spherical_segments(segment)
    return float(kernels.segment_distance_matrix(np.asarray(x, dtype=float)[None], seg[:, 0], seg[:, 1])[0, 0])


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def camera_points(self, points):
        """World points into the camera frame (not normalized)."""
        return (np.asarray(points, dtype=float) - self.translation) @ self.rotation.T


def is_rotation(R, tol: float = UNIT_TOL) -> bool:
    R = np.asarray(R, dtype=float)
    return (
        R.shape == (3, 3)
        and np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) <= tol
    )


def project_points(points, pose: Pose) -> np.ndarray:
    projection_stats["calls"] += 1
    v = pose.camera_points(points)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= EPS_PROJ):
        raise DegenerateProjection("point coincides with the camera center")
    return v / norms


def project_point(p, pose: Pose) -> np.ndarray:
    return project_points(np.asarray(p, dtype=float).reshape(3), pose)


def project_segments(segments, pose: Pose, skip_invalid: bool = False):
    """Project 3D segments to minor arcs.

    With ``skip_invalid`` the degenerate ones are dropped instead of raising,
    and the kept indices are returned alongside the arcs.
    """
    projection_stats["calls"] += 1
    seg = np.asarray(segments, dtype=float).reshape(-1, 2, 3)
    v = pose.camera_points(seg)
    norms = np.linalg.norm(v, axis=-1)
    bad_point = np.any(norms <= EPS_PROJ, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = v / norms[..., None]
        c = np.einsum("ij,ij->i", u[:, 0], u[:, 1])
    bad_arc = ~bad_point & (np.abs(c) >= 1.0 - UNIT_TOL)
    if not skip_invalid:
        if np.any(bad_point):
            raise DegenerateProjection("segment endpoint coincides with the camera center")
        if np.any(bad_arc):
            raise AntipodalSegment("segment passes through the camera center")
        return u
    keep = np.flatnonzero(~(bad_point | bad_arc))
    return u[keep], keep


def project_segment(segment, pose: Pose) -> np.ndarray:
    return project_segments(np.asarray(segment, dtype=float).reshape(1, 2, 3), pose)[0]


def kabsch_rotation(targets, sources) -> np.ndarray:
    """Proper rotation R minimizing sum ||targets_i - R sources_i||^2."""
    a = np.asarray(targets, dtype=float).reshape(-1, 3)
    b = np.asarray(sources, dtype=float).reshape(-1, 3)
    if len(a) != len(b):
        raise ValueError("pair count mismatch")
    H = b.T @ a
    if len(a) < 2 or np.linalg.matrix_rank(H, tol=1e-9 * max(1.0, np.abs(H).max())) < 2:
        raise DegenerateConfiguration("need at least two non-collinear direction pairs")
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    return Vt.T @ np.diag([1.0, 1.0, d]) @ U.T


def rotation_geodesic_error(Ra, Rb) -> float:
    """Angle of Ra^T Rb in degrees."""
    c = (np.trace(np.asarray(Ra).T @ np.asarray(Rb)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def skew(w) -> np.ndarray:
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues exponential of an axis-angle vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + np.sin(theta) / theta * K + (1.0 - np.cos(theta)) / theta**2 * (K @ K)


def orthonormalize(R) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    if np.linalg.det(U @ Vt) < 0:
        U[:, -1] *= -1
    return U @ Vt


def random_rotation(rng) -> np.ndarray:
    q = normalize(rng.normal(size=4))
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def canonical_sign(v) -> np.ndarray:
    """Flip axis vectors so their largest-magnitude coordinate is positive."""
    v = np.array(v, dtype=float)
    idx = np.argmax(np.abs(v), axis=-1)
    s = np.sign(np.take_along_axis(v, idx[..., None], axis=-1))
    return v * np.where(s == 0, 1.0, s)
