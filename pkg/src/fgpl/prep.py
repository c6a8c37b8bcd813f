"""Localization inputs: principal directions, line clusters, intersections."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCluster, InsufficientStructure
from .fields import PAIR_TAGS, build_query_grid
from .sphere import arc_lengths, canonical_sign, great_circle_normals, normalize

THETA_CLUS = math.radians(10.0)
DELTA_2D = 0.1
DELTA_3D = 0.15
MIN_LINE_LENGTH = 0.20
VOTE_GRID_LEVEL = 4
MIN_SEPARATION = math.radians(20.0)
ORTHO_TOLERANCE = math.radians(6.0)  # peaks within 90 +- 6 deg count as orthogonal
MAX_PEAKS = 40
SUPPORT_TOLERANCE = math.radians(2.0)
POLISH_TOLERANCES = (math.radians(5.0), math.radians(2.0), math.radians(1.0))


@dataclass(frozen=True, eq=False)
class LineClusters:
    """Three direction-labelled line groups.

    ``clusters[k]`` holds the segments parallel to principal direction ``k``;
    ``indices[k]`` their positions in the input list. ``labels`` gives the
    cluster of every input line, -1 for discarded ones.
    """

    clusters: tuple
    indices: tuple
    labels: np.ndarray

    def __getitem__(self, k):
        return self.clusters[k]

    def __len__(self):
        return 3

    @property
    def kept(self) -> int:
        return sum(len(c) for c in self.clusters)

    def rotated(self, R) -> "LineClusters":
        R = np.asarray(R, dtype=float)
        return LineClusters(tuple(c @ R.T for c in self.clusters), self.indices, self.labels)


@dataclass(frozen=True, eq=False)
class IntersectionSet:
    """Intersections of one cluster pair ``(a, b)``, a < b.

    ``parents[m] = (ia, ib)`` indexes the parent lines inside clusters a and b.
    """

    pair: tuple
    positions: np.ndarray
    parents: np.ndarray

    def __len__(self):
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class IntersectionClusters:
    sets: tuple  # one IntersectionSet per entry of PAIR_TAGS

    def __getitem__(self, pair) -> IntersectionSet:
        if isinstance(pair, int):
            return self.sets[pair]
        return self.sets[PAIR_TAGS.index(tuple(sorted(pair)))]

    def __iter__(self):
        return iter(self.sets)

    @property
    def total(self) -> int:
        return sum(len(s) for s in self.sets)

    def rotated(self, R) -> "IntersectionClusters":
        R = np.asarray(R, dtype=float)
        return IntersectionClusters(tuple(
            IntersectionSet(s.pair, s.positions @ R.T, s.parents) for s in self.sets))

    def flat(self):
        """(positions, pair index per point, parents) stacked over the three sets."""
        pos = np.concatenate([s.positions.reshape(-1, 3) for s in self.sets])
        pair = np.concatenate([np.full(len(s), k) for k, s in enumerate(self.sets)]).astype(int)
        parents = np.concatenate([s.parents.reshape(-1, 2) for s in self.sets]).astype(int)
        return pos, pair, parents


# --- principal directions -----------------------------------------------------

def _best_triplet(centers, support):
    """Index triple of mutually near-orthogonal peaks with the largest support."""
    m = len(centers)
    if m < 3:
        return None
    ortho = np.abs(centers @ centers.T) < math.sin(ORTHO_TOLERANCE)
    best, best_score = None, -1
    for a in range(m):
        for b in range(a + 1, m):
            if not ortho[a, b]:
                continue
            cs = np.flatnonzero(ortho[a, b + 1:] & ortho[b, b + 1:]) + b + 1
            if len(cs) == 0:
                continue
            c = cs[np.argmax(support[cs])]
            score = support[a] + support[b] + support[c]
            if score > best_score:
                best, best_score = [a, b, int(c)], score
    return best


def _vote(candidates: np.ndarray, vectors: np.ndarray, incident: str, min_votes: int):
    """Pick three axis directions (v ~ -v) from binned candidates.

    Every grid cell hit by a candidate is scored by the number of lines
    incident to its center. Well separated peaks are re-fitted to their
    incident lines, and the mutually near-orthogonal triplet with the most
    support wins (greedy selection if no such triplet exists).
    """
    grid = build_query_grid(VOTE_GRID_LEVEL)
    idx = grid.nearest(candidates)
    cell = np.minimum(idx, grid.antipode[idx])
    hits = np.bincount(cell, minlength=len(grid))
    cells = np.flatnonzero(hits)
    align = np.abs(vectors @ grid.points[cells].T)
    support = _support(align, incident, grid.delta)
    order = np.lexsort((cells, -hits[cells], -support))
    order = order[support[order] >= min_votes]
    peaks = []
    for o in order:
        center = grid.points[cells[o]]
        if all(abs(center @ grid.points[cells[p]]) < math.cos(2 * grid.delta) for p in peaks):
            peaks.append(o)
            if len(peaks) == MAX_PEAKS:
                break
    centers = np.array([_refine_peak(grid.points[cells[p]], vectors, incident) for p in peaks]).reshape(-1, 3)
    fine = _support(vectors @ centers.T, incident, SUPPORT_TOLERANCE)
    chosen = _best_triplet(centers, fine)
    if chosen is None:
        # no near-orthogonal triplet: greedy by support with separation
        chosen = []
        for k in np.argsort(-fine, kind="stable"):
            if all(abs(centers[k] @ centers[c]) < math.cos(MIN_SEPARATION) for c in chosen):
                chosen.append(k)
                if len(chosen) == 3:
                    break
    if len(chosen) < 3:
        raise InsufficientStructure(f"only {len(chosen)} dominant directions found")
    return centers[chosen]


def _support(align, incident, tol):
    align = np.abs(align)
    if incident == "normal":
        return (align < math.sin(tol)).sum(axis=0)
    return (align > math.cos(tol)).sum(axis=0)


def _refine_peak(d, vectors, incident):
    """Re-fit one direction to the lines incident to it, shrinking the band."""
    for tol in POLISH_TOLERANCES:
        align = np.abs(vectors @ d)
        near = align < math.sin(tol) if incident == "normal" else align > math.cos(tol)
        if near.sum() < 2:
            break
        members = vectors[near]
        _, V = np.linalg.eigh(members.T @ members)
        new = V[:, 0] if incident == "normal" else V[:, -1]
        d = new * (np.sign(new @ d) or 1.0)
    return d


def _polish(dirs, vectors, incident):
    """Least-squares re-fit of each direction to its incident lines.

    Lines incident to two directions at once (e.g. lines in the camera's
    horizon plane, which pass through two vanishing points) are left out.
    """
    dirs = np.array(dirs)
    for tol in POLISH_TOLERANCES:
        align = np.abs(vectors @ dirs.T)
        dev = np.arcsin(np.clip(align, 0, 1)) if incident == "normal" else np.arccos(np.clip(align, 0, 1))
        near = dev < tol
        unique = near.sum(axis=1) == 1
        for k in range(3):
            members = vectors[near[:, k] & unique]
            if len(members) < 2:
                continue
            _, V = np.linalg.eigh(members.T @ members)
            new = V[:, 0] if incident == "normal" else V[:, -1]
            dirs[k] = new * (np.sign(new @ dirs[k]) or 1.0)
    return dirs


def _finish(dirs) -> np.ndarray:
    dirs = canonical_sign(dirs)
    for i in range(3):
        for j in range(i + 1, 3):
            if abs(dirs[i] @ dirs[j]) >= math.cos(MIN_SEPARATION):
                raise InsufficientStructure("principal directions collapsed together")
    return dirs


def _min_votes(n_lines: int) -> int:
    return max(3, int(math.ceil(0.02 * n_lines)))


def estimate_principal_directions_2d(lines) -> np.ndarray:
    """Three vanishing directions (rows) with the most incident lines."""
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 3)
    if len(lines) < 2:
        raise InsufficientStructure("too few lines")
    normals = great_circle_normals(lines)
    i, j = np.triu_indices(len(normals), k=1)
    cand = np.cross(normals[i], normals[j])
    norm = np.linalg.norm(cand, axis=1)
    ok = norm > 1e-6
    if not np.any(ok):
        raise InsufficientStructure("all lines lie on one great circle")
    dirs = _vote(cand[ok] / norm[ok, None], normals, "normal", _min_votes(len(lines)))
    return _finish(_polish(dirs, normals, "normal"))


def estimate_principal_directions_3d(lines) -> np.ndarray:
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 3)
    if len(lines) < 3:
        raise InsufficientStructure("too few lines")
    u = normalize(lines[:, 1] - lines[:, 0])
    dirs = _vote(u, u, "direction", _min_votes(len(lines)))
    return _finish(_polish(dirs, u, "direction"))


# --- clustering and filtering -------------------------------------------------

def line_deviations(lines, directions, kind: str) -> np.ndarray:
    """Angular deviation (N, 3) of every line from every principal direction."""
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 3)
    if kind == "2d":
        return np.arcsin(np.clip(np.abs(great_circle_normals(lines) @ directions.T), 0.0, 1.0))
    u = normalize(lines[:, 1] - lines[:, 0])
    return np.arccos(np.clip(np.abs(u @ directions.T), 0.0, 1.0))


def cluster_lines(lines, directions, theta_clus: float = THETA_CLUS, kind: str = "2d") -> LineClusters:
    lines = np.asarray(lines, dtype=float).reshape(-1, 2, 3)
    dev = line_deviations(lines, np.asarray(directions, dtype=float), kind)
    best = dev.argmin(axis=1)
    labels = np.where(dev[np.arange(len(lines)), best] < theta_clus, best, -1)
    idx = tuple(np.flatnonzero(labels == k) for k in range(3))
    if any(len(ix) == 0 for ix in idx):
        raise EmptyCluster("a principal direction has no supporting lines")
    return LineClusters(tuple(lines[ix] for ix in idx), idx, labels)


def keep_longest_2d(lines2d, ratio: float):
    lines2d = np.asarray(lines2d, dtype=float).reshape(-1, 2, 3)
    n_keep = int(math.ceil(ratio * len(lines2d) - 1e-9))
    order = np.argsort(-arc_lengths(lines2d), kind="stable")[:n_keep]
    return lines2d[np.sort(order)]


def filter_lines_by_length(lines3d, lines2d, min_length: float = MIN_LINE_LENGTH):
    """Drop short 3D lines, then keep the same fraction of longest 2D lines."""
    lines3d = np.asarray(lines3d, dtype=float).reshape(-1, 2, 3)
    keep = np.linalg.norm(lines3d[:, 1] - lines3d[:, 0], axis=1) >= min_length
    ratio = keep.mean() if len(lines3d) else 0.0
    return lines3d[keep], keep_longest_2d(lines2d, ratio)


# --- intersections ------------------------------------------------------------

def _arc_distance_pairwise(x, starts, ends):
    """Elementwise spherical distance from x[m] to the arc (starts[m], ends[m])."""
    n = normalize(np.cross(starts, ends))
    c = np.einsum("ij,ij->i", starts, ends)
    xs = np.einsum("ij,ij->i", x, starts)
    xe = np.einsum("ij,ij->i", x, ends)
    inside = (xe - c * xs > 0) & (xs - c * xe > 0)
    perp = np.arcsin(np.clip(np.abs(np.einsum("ij,ij->i", x, n)), 0.0, 1.0))
    return np.where(inside, perp, np.arccos(np.clip(np.maximum(xs, xe), -1.0, 1.0)))


def extract_intersections_2d(clusters: LineClusters, delta_2d: float = DELTA_2D) -> IntersectionClusters:
    sets = []
    for a, b in PAIR_TAGS:
        la, lb = clusters[a], clusters[b]
        ia, ib = np.meshgrid(np.arange(len(la)), np.arange(len(lb)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        cand = np.cross(great_circle_normals(la)[ia], great_circle_normals(lb)[ib]) if len(ia) else np.empty((0, 3))
        norm = np.linalg.norm(cand, axis=1)
        ok = norm > 1e-9
        ia, ib, cand = ia[ok], ib[ok], cand[ok] / norm[ok, None]
        pos, par = [], []
        for sign in (1.0, -1.0):
            x = sign * cand
            keep = (_arc_distance_pairwise(x, la[ia, 0], la[ia, 1]) <= delta_2d) & \
                   (_arc_distance_pairwise(x, lb[ib, 0], lb[ib, 1]) <= delta_2d)
            pos.append(x[keep])
            par.append(np.stack([ia[keep], ib[keep]], axis=1))
        pos, par = np.concatenate(pos), np.concatenate(par)
        order = np.lexsort((par[:, 1], par[:, 0]))
        sets.append(IntersectionSet((a, b), pos[order].reshape(-1, 3), par[order].reshape(-1, 2)))
    return IntersectionClusters(tuple(sets))


def point_segment_distance(x, starts, ends):
    """Elementwise Euclidean distance from x[m] to the finite segment m."""
    d = ends - starts
    s = np.clip(np.einsum("ij,ij->i", x - starts, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    return np.linalg.norm(x - (starts + s[:, None] * d), axis=1)


def closest_point_midpoints(p1, u1, p2, u2):
    """Midpoint of the common perpendicular of each pair of infinite lines.

    Returns (midpoints, valid) where invalid marks (near-)parallel pairs.
    """
    b = np.einsum("ij,ij->i", u1, u2)
    w = p1 - p2
    d = np.einsum("ij,ij->i", u1, w)
    e = np.einsum("ij,ij->i", u2, w)
    denom = 1.0 - b * b
    valid = denom > 1e-9
    denom = np.where(valid, denom, 1.0)
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    return 0.5 * ((p1 + s[:, None] * u1) + (p2 + t[:, None] * u2)), valid


def extract_intersections_3d(clusters: LineClusters, delta_3d: float = DELTA_3D) -> IntersectionClusters:
    sets = []
    for a, b in PAIR_TAGS:
        la, lb = clusters[a], clusters[b]
        ia, ib = np.meshgrid(np.arange(len(la)), np.arange(len(lb)), indexing="ij")
        ia, ib = ia.ravel(), ib.ravel()
        if len(ia) == 0:
            sets.append(IntersectionSet((a, b), np.empty((0, 3)), np.empty((0, 2), dtype=int)))
            continue
        sa, ea, sb, eb = la[ia, 0], la[ia, 1], lb[ib, 0], lb[ib, 1]
        mid, valid = closest_point_midpoints(sa, normalize(ea - sa), sb, normalize(eb - sb))
        keep = valid & (point_segment_distance(mid, sa, ea) <= delta_3d) & \
            (point_segment_distance(mid, sb, eb) <= delta_3d)
        sets.append(IntersectionSet((a, b), mid[keep], np.stack([ia[keep], ib[keep]], axis=1)))
    return IntersectionClusters(tuple(sets))
