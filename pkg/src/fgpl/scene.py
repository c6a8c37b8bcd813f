"""Synthetic Manhattan-world rooms rendered to panoramic line sets."""
from dataclasses import dataclass, field

import numpy as np

from .errors import PoseOutsideRoom
from .prep import point_segment_distance
from .sphere import Pose, normalize, project_segments, random_rotation

_BOX_EDGES = ((0, 1), (2, 3), (4, 5), (6, 7), (0, 2), (1, 3), (4, 6), (5, 7), (0, 4), (1, 5), (2, 6), (3, 7))
MIN_CLEARANCE = 0.3


@dataclass(frozen=True)
class NoiseSpec:
    angular_sigma: float = 0.0  # radians, per endpoint
    dropout: float = 0.0
    clutter: float = 0.0


@dataclass(eq=False)
class SyntheticScene:
    lines3d: np.ndarray
    gt_pose: Pose
    lines2d: np.ndarray
    sources: np.ndarray  # 3D line index per 2D line, -1 for clutter
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    room: tuple = (6.0, 4.0, 3.0)


def box_edges(lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
    corners = np.array([[(hi if (k >> a) & 1 else lo)[a] for a in range(3)] for k in range(8)])
    return np.array([[corners[a], corners[b]] for a, b in _BOX_EDGES])


def box_corners(lo, hi) -> np.ndarray:
    return np.unique(box_edges(lo, hi).reshape(-1, 3), axis=0)


def room_lines(room, furniture: int, rng) -> np.ndarray:
    """Room wireframe plus axis-aligned boxes standing on the floor."""
    W, D, H = room
    segs = [box_edges((0, 0, 0), room)]
    for _ in range(furniture):
        size = rng.uniform([0.4, 0.4, 0.4], [min(1.6, W / 3), min(1.6, D / 3), min(2.0, 0.8 * H)])
        lo = rng.uniform([0.2, 0.2], [W - size[0] - 0.2, D - size[1] - 0.2])
        lo = np.array([lo[0], lo[1], 0.0])
        segs.append(box_edges(lo, lo + size))
    return np.concatenate(segs)


def clearance(point, lines3d) -> float:
    p = np.broadcast_to(np.asarray(point, dtype=float), (len(lines3d), 3))
    return float(point_segment_distance(p, lines3d[:, 0], lines3d[:, 1]).min())


def random_pose_sampler(margin: float = 0.5):
    def sample(rng, room, lines3d):
        lo = np.array([margin, margin, min(0.8, room[2] / 2)])
        hi = np.asarray(room, dtype=float) - margin
        for _ in range(200):
            t = rng.uniform(lo, hi)
            if clearance(t, lines3d) > MIN_CLEARANCE:
                return Pose(random_rotation(rng), t)
        raise RuntimeError("could not place a camera away from the lines")
    return sample


def fixed_translation_sampler(translation, offset: float = 0.0):
    """Random rotation at ``translation``, displaced by at most ``offset`` meters."""
    def sample(rng, room, lines3d):
        t = np.asarray(translation, dtype=float)
        if offset > 0:
            t = t + normalize(rng.normal(size=3)) * offset * rng.uniform() ** (1 / 3)
        return Pose(random_rotation(rng), t)
    return sample


def _jitter(points, sigma, rng):
    if sigma <= 0:
        return points
    xi = rng.normal(scale=sigma, size=points.shape)
    xi -= np.einsum("ij,ij->i", xi, points)[:, None] * points
    return normalize(points + xi)


def _random_arcs(n, rng, min_len=0.1, max_len=0.6):
    s = normalize(rng.normal(size=(n, 3)))
    d = rng.normal(size=(n, 3))
    d = normalize(d - np.einsum("ij,ij->i", d, s)[:, None] * s)
    ang = rng.uniform(min_len, max_len, size=n)[:, None]
    e = np.cos(ang) * s + np.sin(ang) * d
    return np.stack([s, e], axis=1)


def render(lines3d, pose: Pose, noise: NoiseSpec, rng):
    arcs = project_segments(lines3d, pose)
    sources = np.arange(len(arcs))
    if noise.angular_sigma > 0:
        flat = _jitter(arcs.reshape(-1, 3), noise.angular_sigma, rng)
        arcs = flat.reshape(-1, 2, 3)
    n_clutter = int(round(noise.clutter * len(arcs)))
    if noise.dropout > 0:
        n_drop = int(round(noise.dropout * len(arcs)))
        keep = np.sort(rng.permutation(len(arcs))[n_drop:])
        arcs, sources = arcs[keep], sources[keep]
    if n_clutter:
        arcs = np.concatenate([arcs, _random_arcs(n_clutter, rng)])
        sources = np.concatenate([sources, np.full(n_clutter, -1)])
    return arcs, sources


def generate_scene(room=(6.0, 4.0, 3.0), furniture: int = 4, pose_sampler=None,
                   noise: NoiseSpec = NoiseSpec(), seed: int = 0) -> SyntheticScene:
    room = tuple(float(x) for x in room)
    if min(room) <= 0:
        raise ValueError("room dimensions must be positive")
    rng = np.random.default_rng(seed)
    lines3d = room_lines(room, furniture, rng)
    if pose_sampler is None:
        pose_sampler = random_pose_sampler()
    pose = pose_sampler if isinstance(pose_sampler, Pose) else pose_sampler(rng, room, lines3d)
    t = pose.translation
    if np.any(t <= 0) or np.any(t >= np.asarray(room)):
        raise PoseOutsideRoom(f"camera at {t} is outside the room")
    lines2d, sources = render(lines3d, pose, noise, rng)
    return SyntheticScene(lines3d, pose, lines2d, sources, noise, seed, room)
