"""Pose search over a translation x rotation pool using cached 3D fields."""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyPool, GridMismatch
from .fields import (
    GAMMA,
    PAIR_TAGS,
    TAU,
    FieldCache,
    QueryGrid,
    build_field_cache,
    build_rotation_nn_map,
    fields_at_translation,
    line_field_2d,
    point_field_2d,
)
from .prep import IntersectionClusters, LineClusters
from .sphere import Pose, kabsch_rotation, normalize

TOP_K = 5
ROT_RESIDUAL_DEG = 5.0
AXES = np.eye(3)


# --- pools --------------------------------------------------------------------

def _axis_counts(extent, h):
    return np.maximum(1, np.ceil(extent / h - 1e-9)).astype(int)


def translation_grid_counts(extent, n: int) -> np.ndarray:
    """Per-axis cell counts: the coarsest uniform spacing whose product reaches n."""
    extent = np.asarray(extent, dtype=float)
    candidates = sorted({e / k for e in extent if e > 0 for k in range(1, n + 1)}, reverse=True)
    for h in candidates:
        counts = _axis_counts(extent, h)
        if np.prod(counts) >= n:
            return counts
    return _axis_counts(extent, candidates[-1])


def generate_translation_pool(bbox_min, bbox_max, n: int) -> np.ndarray:
    """Centers of a uniform bbox subdivision, trimmed to the n closest to the center."""
    if n < 1:
        raise ValueError("need at least one translation")
    lo = np.asarray(bbox_min, dtype=float)
    hi = np.asarray(bbox_max, dtype=float)
    extent = hi - lo
    counts = translation_grid_counts(extent, n)
    axes = [lo[i] + (np.arange(c) + 0.5) * extent[i] / c for i, c in enumerate(counts)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    dist = np.round(np.linalg.norm(centers - (lo + hi) / 2, axis=1), 9)
    keep = np.sort(np.argsort(dist, kind="stable")[:n])
    return centers[keep]


@dataclass(frozen=True, eq=False)
class RotationCandidate:
    """Rotation (canonical map frame -> camera) from one direction association.

    2D direction i is paired with ``signs[i] * d3d[perm[i]]``.
    """

    rotation: np.ndarray
    perm: tuple
    signs: tuple
    residual_deg: float


def generate_rotation_pool(d2d, d3d, residual_deg: float | None = ROT_RESIDUAL_DEG) -> list:
    """All 2^3 x 3! signed associations, Kabsch-fitted.

    With ``residual_deg`` set, associations fitting worse than that are dropped
    (the best one is always kept); ``None`` keeps all 48.
    """
    d2d = np.asarray(d2d, dtype=float)
    d3d = np.asarray(d3d, dtype=float)
    pool = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            src = np.array([signs[i] * d3d[perm[i]] for i in range(3)])
            R = kabsch_rotation(d2d, src)
            cosines = np.einsum("ij,ij->i", d2d, src @ R.T)
            resid = float(np.degrees(np.arccos(np.clip(cosines, -1.0, 1.0))).max())
            pool.append(RotationCandidate(R, perm, signs, resid))
    if residual_deg is not None:
        best = min(c.residual_deg for c in pool)
        pool = [c for c in pool if c.residual_deg <= residual_deg or c.residual_deg == best]
    return pool


# --- canonical map ------------------------------------------------------------

@dataclass(eq=False)
class CanonicalMap:
    """A 3D line map prepared for search.

    ``canonical_rotation`` maps the original frame to the canonical one, in
    which the 3D principal directions align with the world axes and the
    field cache is expressed.
    """

    lines: LineClusters
    intersections: IntersectionClusters
    directions: np.ndarray
    canonical_rotation: np.ndarray
    translations: np.ndarray
    cache: FieldCache
    grid: QueryGrid
    original_lines: LineClusters
    original_intersections: IntersectionClusters
    original_directions: np.ndarray
    length_ratio: float = 1.0

    def to_original(self, R_canon, t_canon) -> Pose:
        Rc = self.canonical_rotation
        return Pose(np.asarray(R_canon) @ Rc, Rc.T @ np.asarray(t_canon))


def canonicalize_map(clusters3d: LineClusters, intersections3d: IntersectionClusters, d3d, translations,
                     grid: QueryGrid, gamma: float = GAMMA, tau: float = TAU, map_id: str = "",
                     cache: FieldCache | None = None, length_ratio: float = 1.0) -> CanonicalMap:
    d3d = np.asarray(d3d, dtype=float)
    Rc = kabsch_rotation(AXES, d3d)
    lines = clusters3d.rotated(Rc)
    inter = intersections3d.rotated(Rc)
    trans = np.asarray(translations, dtype=float).reshape(-1, 3) @ Rc.T
    if cache is None:
        cache = build_field_cache(lines.clusters, [s.positions for s in inter], trans, grid, gamma, tau, map_id)
    elif cache.grid_level != grid.level or cache.num_points != len(grid):
        raise GridMismatch("cache was built on a different grid")
    elif len(cache.translations) != len(trans):
        raise ValueError("cache translation count does not match the map")
    elif map_id and cache.map_id and cache.map_id != map_id:
        raise ValueError("cache was built for a different map")
    return CanonicalMap(lines, inter, normalize(d3d @ Rc.T), Rc, cache.translations, cache, grid,
                        clusters3d, intersections3d, d3d, length_ratio)


# --- search -------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class QueryFeatures:
    lines: LineClusters
    intersections: IntersectionClusters
    directions: np.ndarray


@dataclass(frozen=True, eq=False)
class PoseCandidate:
    pose: Pose
    perm: tuple
    signs: tuple
    cost: int
    rotation_index: int
    translation_index: int


def query_fields(query: QueryFeatures, grid: QueryGrid, gamma: float = GAMMA) -> np.ndarray:
    """(6, |Q|) 2D fields at identity; empty clusters become +inf."""
    out = np.full((6, len(grid)), np.inf)
    for k in range(3):
        if len(query.lines[k]):
            out[k] = line_field_2d(query.lines[k], grid).values
    for k, s in enumerate(query.intersections):
        if len(s):
            out[3 + k] = point_field_2d(s.positions, grid, gamma).values
    return out


def association_rows(perm) -> np.ndarray:
    """Row order aligning 2D fields with the 3D fields they are compared to.

    Entry r gives the 2D row compared against 3D row r.
    """
    rows = np.empty(6, dtype=int)
    for i in range(3):
        rows[perm[i]] = i
    for k, (i, j) in enumerate(PAIR_TAGS):
        rows[3 + PAIR_TAGS.index(tuple(sorted((perm[i], perm[j]))))] = 3 + k
    return rows


def rotated_query_matrix(fields2d, pool, grid: QueryGrid) -> np.ndarray:
    """(N_r, 6|Q|) float32: 2D fields of R^T-rotated inputs, per pool rotation."""
    out = np.empty((len(pool), 6 * len(grid)), dtype=np.float32)
    for r, cand in enumerate(pool):
        nn = build_rotation_nn_map(cand.rotation, grid)
        out[r] = fields2d[association_rows(cand.perm)][:, nn.index].ravel()
    return out


def rank_candidates(costs: np.ndarray, k: int):
    """Flat (rotation, translation) indices of the k lowest costs.

    Ties break by translation index, then rotation index.
    """
    n_r, n_t = costs.shape
    r_idx, t_idx = np.meshgrid(np.arange(n_r), np.arange(n_t), indexing="ij")
    order = np.lexsort((r_idx.ravel(), t_idx.ravel(), costs.ravel()))[:k]
    return r_idx.ravel()[order], t_idx.ravel()[order]


def search(query: QueryFeatures, cmap: CanonicalMap, k: int = TOP_K, tau: float | None = None,
           pool: list | None = None, gamma: float | None = None):
    """Top-k pose candidates (original map frame) by cached, interpolated cost."""
    grid = cmap.grid
    cache = cmap.cache
    if cache.num_points != len(grid):
        raise GridMismatch("cache and grid disagree")
    tau = cache.tau if tau is None else tau
    gamma = cache.gamma if gamma is None else gamma
    if pool is None:
        pool = generate_rotation_pool(query.directions, cmap.directions)
    if not pool or len(cache.translations) == 0:
        raise EmptyPool("empty pose pool")
    qmat = rotated_query_matrix(query_fields(query, grid, gamma), pool, grid)
    costs = kernels.search_costs(qmat, cache.flat(), tau)
    out = []
    for r, t in zip(*rank_candidates(costs, k)):
        cand = pool[r]
        out.append(PoseCandidate(cmap.to_original(cand.rotation, cache.translations[t]),
                                 cand.perm, cand.signs, int(costs[r, t]), int(r), int(t)))
    return out


def search_rooms(query: QueryFeatures, maps, k: int = TOP_K, tau: float | None = None):
    """Search several room maps and merge by cost; returns (room index, candidate) pairs."""
    merged = []
    for room, cmap in enumerate(maps):
        merged += [(room, c) for c in search(query, cmap, k, tau)]
    merged.sort(key=lambda rc: (rc[1].cost, rc[0], rc[1].translation_index, rc[1].rotation_index))
    return merged[:k]


def exhaustive_costs(query: QueryFeatures, cmap: CanonicalMap, pool, translation_indices=None,
                     tau: float | None = None, gamma: float | None = None) -> np.ndarray:
    """On-the-fly cost of every (rotation, translation) pose.

    3D fields are recomputed by projecting the original map at each pose and
    compared with the unrotated 2D fields; no caching, no interpolation.
    """
    grid = cmap.grid
    tau = cmap.cache.tau if tau is None else tau
    gamma = cmap.cache.gamma if gamma is None else gamma
    f2d = query_fields(query, grid, gamma).astype(np.float32)
    if translation_indices is None:
        translation_indices = range(len(cmap.translations))
    translation_indices = list(translation_indices)
    lines = cmap.original_lines.clusters
    points = [s.positions for s in cmap.original_intersections]
    costs = np.empty((len(pool), len(translation_indices)), dtype=np.int64)
    for r, cand in enumerate(pool):
        rows = association_rows(cand.perm)
        for j, t in enumerate(translation_indices):
            pose = cmap.to_original(cand.rotation, cmap.translations[t])
            # rotating the map into the camera frame and projecting from the
            # camera center equals projecting with the full pose
            Rw = pose.rotation
            cam_lines = [(c - pose.translation) @ Rw.T for c in lines]
            cam_points = [(p - pose.translation) @ Rw.T for p in points]
            f3d = fields_at_translation(cam_lines, cam_points, np.zeros(3), grid, gamma).astype(np.float32)
            with np.errstate(invalid="ignore"):
                costs[r, j] = -np.count_nonzero(np.abs(f2d[rows] - f3d) < np.float32(tau))
    return costs
