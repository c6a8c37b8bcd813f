"""Line and point distance fields sampled on an icosphere query grid.

A field stores, for every grid point ``q``, the spherical distance to the
nearest line segment (line field) or the sharpened distance ``d ** gamma`` to
the nearest point (point field). Fields of rotated inputs are approximated by
re-indexing a field computed once at identity (nearest-neighbour lookup),
which the cached pose search relies on.
"""
import hashlib
import io
import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import (
    BadMagic,
    CacheFormatError,
    DensityViolation,
    EmptyInput,
    GridMismatch,
    UnsupportedVersion,
)
from .sphere import Pose, project_points, project_segments

GAMMA = 0.2
TAU = 0.1

LINE_TAGS = (0, 1, 2)
PAIR_TAGS = ((0, 1), (1, 2), (0, 2))
PAIR_LABELS = ("12", "23", "31")


def pair_index(a: int, b: int) -> int:
    return PAIR_TAGS.index((min(a, b), max(a, b)))


# --- query grid ---------------------------------------------------------------

def _icosahedron():
    p = (1.0 + 5.0 ** 0.5) / 2.0
    verts = np.array([
        [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
        [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
        [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
    ], dtype=float)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return verts / np.linalg.norm(verts, axis=1, keepdims=True), faces


def icosphere(level: int) -> np.ndarray:
    verts, faces = _icosahedron()
    verts = list(verts)
    for _ in range(level):
        midpoints = {}

        def mid(a, b):
            key = (a, b) if a < b else (b, a)
            if key not in midpoints:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                midpoints[key] = len(verts) - 1
            return midpoints[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.array(verts)


def max_nn_distance(points: np.ndarray, chunk: int = 1024) -> float:
    """max over q of the distance to its nearest distinct neighbour (exhaustive)."""
    best = -np.inf
    for lo in range(0, len(points), chunk):
        dots = points[lo:lo + chunk] @ points.T
        idx = np.arange(lo, min(lo + chunk, len(points)))
        dots[idx - lo, idx] = -np.inf
        best = max(best, float(np.arccos(np.clip(dots.max(axis=1), -1.0, 1.0)).max()))
    return best


@dataclass(frozen=True, eq=False)
class QueryGrid:
    level: int
    points: np.ndarray
    delta: float

    def __len__(self):
        return len(self.points)

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def antipode(self) -> np.ndarray:
        return self.tree.query(-self.points)[1]

    def nearest(self, v) -> np.ndarray:
        """Index of the nearest grid point (chordal and geodesic NN coincide)."""
        return self.tree.query(np.asarray(v, dtype=float))[1]

    def same_as(self, other: "QueryGrid") -> bool:
        return self is other or (self.level == other.level and len(self) == len(other))


@lru_cache(maxsize=None)
def build_query_grid(level: int) -> QueryGrid:
    if not 0 <= level <= 4:
        raise ValueError("grid level must be in [0, 4]")
    pts = icosphere(level)
    pts.setflags(write=False)
    return QueryGrid(level, pts, max_nn_distance(pts))


# --- distance fields ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DistanceField:
    values: np.ndarray
    kind: str
    tag: object
    grid_level: int

    def __len__(self):
        return len(self.values)


def _check_grid(a: DistanceField, b: DistanceField):
    if a.grid_level != b.grid_level or len(a) != len(b):
        raise GridMismatch("fields sampled on different grids")


def line_field_2d(lines, grid: QueryGrid, tag=None) -> DistanceField:
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 3)
    if len(lines) == 0:
        raise EmptyInput("no line segments")
    return DistanceField(kernels.line_field(grid.points, lines[:, 0], lines[:, 1]), "line", tag, grid.level)


def point_field_2d(points, grid: QueryGrid, gamma: float = GAMMA, tag=None) -> DistanceField:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(points) == 0:
        raise EmptyInput("no points")
    if not 0 < gamma <= 1:
        raise ValueError("gamma must lie in (0, 1]")
    return DistanceField(kernels.point_field(grid.points, points) ** gamma, "point", tag, grid.level)


def line_field_3d(lines, t, grid: QueryGrid, tag=None) -> DistanceField:
    arcs, _ = project_segments(lines, Pose(np.eye(3), t), skip_invalid=True)
    return line_field_2d(arcs, grid, tag)


def _project_points_skipping(points, pose: Pose) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    keep = np.linalg.norm(pose.camera_points(points), axis=1) > 1e-6
    if not np.any(keep):
        return np.empty((0, 3))
    return project_points(points[keep], pose)


def point_field_3d(points, t, grid: QueryGrid, gamma: float = GAMMA, tag=None) -> DistanceField:
    return point_field_2d(_project_points_skipping(points, Pose(np.eye(3), t)), grid, gamma, tag)


# --- rotation by nearest-neighbour re-indexing --------------------------------

@dataclass(frozen=True, eq=False)
class RotationNNMap:
    rotation: np.ndarray
    index: np.ndarray
    max_distance: float
    grid_level: int


def build_rotation_nn_map(R, grid: QueryGrid, exhaustive: bool = False) -> RotationNNMap:
    """index[k] = argmin over grid points q' of d(q', R q_k)."""
    R = np.asarray(R, dtype=float)
    rotated = grid.points @ R.T
    if exhaustive:
        index = np.argmax(rotated @ grid.points.T, axis=1)
    else:
        index = grid.nearest(rotated)
    dots = np.einsum("ij,ij->i", grid.points[index], rotated)
    max_dist = float(np.arccos(np.clip(dots, -1.0, 1.0)).max())
    if max_dist > grid.delta + 1e-12:
        raise DensityViolation(f"grid covering radius {max_dist:.4g} exceeds delta {grid.delta:.4g}")
    return RotationNNMap(R, index, max_dist, grid.level)


def rotate_field(f: DistanceField, nn_map: RotationNNMap) -> DistanceField:
    """Approximate the field of inputs rotated by ``nn_map.rotation.T``."""
    if f.grid_level != nn_map.grid_level or len(f) != len(nn_map.index):
        raise GridMismatch("nn-map built on a different grid")
    return DistanceField(f.values[nn_map.index], f.kind, f.tag, f.grid_level)


def field_cost(f2d: DistanceField, f3d: DistanceField, tau: float = TAU) -> int:
    """Robust inlier count, negated: -#{q : |f2d(q) - f3d(q)| < tau}."""
    _check_grid(f2d, f3d)
    if f2d.kind != f3d.kind:
        raise GridMismatch("cannot compare line and point fields")
    a = f2d.values.astype(np.float32)
    b = f3d.values.astype(np.float32)
    with np.errstate(invalid="ignore"):
        return -int(np.count_nonzero(np.abs(a - b) < np.float32(tau)))


# --- cache of 3D fields over translations -------------------------------------

MAGIC = b"FGPL"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIddI")
_TAG_CODES = (1, 2, 3, 12, 23, 31)


def map_fingerprint(lines3d) -> str:
    arr = np.ascontiguousarray(np.asarray(lines3d, dtype="<f8"))
    return hashlib.sha256(arr.tobytes()).hexdigest()[:16]


@dataclass(eq=False)
class FieldCache:
    """3D fields at identity rotation, one (6, |Q|) block per translation.

    Rows 0-2 are line fields of clusters 1-3, rows 3-5 point fields of the
    intersection clusters 12, 23, 31. Empty clusters are stored as +inf so
    they never count as inliers.
    """

    translations: np.ndarray
    fields: np.ndarray
    grid_level: int
    gamma: float = GAMMA
    tau: float = TAU
    map_id: str = ""
    version: int = FORMAT_VERSION
    tags: tuple = field(default=_TAG_CODES)

    def __post_init__(self):
        self.translations = np.asarray(self.translations, dtype=np.float64).reshape(-1, 3)
        self.fields = np.asarray(self.fields, dtype=np.float32)
        if self.fields.shape[:2] != (len(self.translations), 6):
            raise ValueError("fields must have shape (num_translations, 6, |Q|)")

    @property
    def num_points(self) -> int:
        return self.fields.shape[2]

    def flat(self) -> np.ndarray:
        return self.fields.reshape(len(self.translations), -1)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        mid = self.map_id.encode("utf-8")
        buf.write(_HEADER.pack(MAGIC, self.version, self.grid_level, self.num_points,
                               self.gamma, self.tau, len(self.translations)))
        buf.write(struct.pack("<I", len(mid)))
        buf.write(mid)
        tags = struct.pack("<6B", *self.tags)
        for t, f in zip(self.translations, self.fields):
            buf.write(np.asarray(t, dtype="<f8").tobytes())
            buf.write(np.ascontiguousarray(f, dtype="<f4").tobytes())
            buf.write(tags)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "FieldCache":
        if len(data) < _HEADER.size + 4:
            raise CacheFormatError("truncated header")
        magic, version, level, nq, gamma, tau, nt = _HEADER.unpack_from(data, 0)
        if magic != MAGIC:
            raise BadMagic(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise UnsupportedVersion(f"unsupported cache format version {version}")
        off = _HEADER.size
        (mlen,) = struct.unpack_from("<I", data, off)
        off += 4
        map_id = data[off:off + mlen].decode("utf-8")
        off += mlen
        rec = 24 + 6 * nq * 4 + 6
        if len(data) != off + nt * rec:
            raise CacheFormatError("payload size does not match header")
        trans = np.empty((nt, 3))
        fields = np.empty((nt, 6, nq), dtype=np.float32)
        tags = _TAG_CODES
        for i in range(nt):
            base = off + i * rec
            trans[i] = np.frombuffer(data, "<f8", 3, base)
            fields[i] = np.frombuffer(data, "<f4", 6 * nq, base + 24).reshape(6, nq)
            tags = struct.unpack_from("<6B", data, base + 24 + 6 * nq * 4)
            if tags != _TAG_CODES:
                raise CacheFormatError(f"unexpected cluster tags {tags}")
        return cls(trans, fields, level, gamma, tau, map_id, version, tuple(tags))

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FieldCache":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def fields_at_translation(line_clusters, point_clusters, t, grid: QueryGrid, gamma: float = GAMMA) -> np.ndarray:
    """(6, |Q|) block of 3D fields seen from ``t`` at identity rotation."""
    out = np.full((6, len(grid)), np.inf)
    pose = Pose(np.eye(3), t)
    for k, lines in enumerate(line_clusters):
        if len(lines):
            arcs, _ = project_segments(lines, pose, skip_invalid=True)
            out[k] = kernels.line_field(grid.points, arcs[:, 0], arcs[:, 1])
    for k, pts in enumerate(point_clusters):
        proj = _project_points_skipping(pts, pose) if len(pts) else np.empty((0, 3))
        if len(proj):
            out[3 + k] = kernels.point_field(grid.points, proj) ** gamma
    return out


def build_field_cache(line_clusters, point_clusters, translations, grid: QueryGrid,
                      gamma: float = GAMMA, tau: float = TAU, map_id: str = "") -> FieldCache:
    translations = np.asarray(translations, dtype=float).reshape(-1, 3)
    fields = np.empty((len(translations), 6, len(grid)), dtype=np.float32)
    for i, t in enumerate(translations):
        fields[i] = fields_at_translation(line_clusters, point_clusters, t, grid, gamma)
    return FieldCache(translations, fields, grid.level, gamma, tau, map_id)
