"""Pose refinement by aligning line intersections, then line directions."""
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import AllCandidatesFailed, TooFewMatches
from .fields import PAIR_TAGS
from .prep import IntersectionClusters, LineClusters
from .sphere import Pose, exp_so3, normalize, orthonormalize

DELTA_MATCH = 0.1
STEPS = 100
STEP_SIZE = 0.1
PATIENCE = 10
MIN_POINT_MATCHES = 3
MIN_LINE_MATCHES = 2

CLUSTER_GUIDED = "cluster_guided"
CLOSE_PROJECTION = "close_projection"


class PointMatch(NamedTuple):
    i2d: int  # index into IntersectionClusters.flat() of the query
    i3d: int  # index into IntersectionClusters.flat() of the map
    origin: str


class LineMatch(NamedTuple):
    l2d: np.ndarray
    l3d: np.ndarray
    key: tuple  # ((cluster2d, line2d), (cluster3d, line3d))


@dataclass
class RefinementResult:
    pose: Pose
    trans_cost_history: list = field(default_factory=list)
    rot_cost_history: list = field(default_factory=list)
    match_count: int = 0
    score: float = math.inf
    close_match_count: int = 0
    candidate_index: int = -1
    final_trans_cost_history: list = field(default_factory=list)  # closing translation pass


class Flat(NamedTuple):
    positions: np.ndarray
    pair: np.ndarray
    parents: np.ndarray


def flatten(inter: IntersectionClusters) -> Flat:
    return Flat(*inter.flat())


def _project(points, pose: Pose):
    v = pose.camera_points(points)
    n = np.linalg.norm(v, axis=1, keepdims=True)
    ok = n[:, 0] > 1e-6
    return v / np.where(ok[:, None], n, 1.0), ok


def _mutual_nn(a, b):
    """Index pairs (i, j) with a[i] and b[j] each other's nearest neighbour."""
    if len(a) == 0 or len(b) == 0:
        return np.empty(0, dtype=int), np.empty(0, dtype=int)
    dots = a @ b.T
    ab = dots.argmax(axis=1)
    ba = dots.argmax(axis=0)
    i = np.flatnonzero(ba[ab] == np.arange(len(a)))
    return i, ab[i]


def cluster_guided_matches(p2d: Flat, p3d: Flat, pose: Pose, perm) -> list:
    proj, ok = _project(p3d.positions, pose)
    out = []
    for k, (i, j) in enumerate(PAIR_TAGS):
        target = PAIR_TAGS.index(tuple(sorted((perm[i], perm[j]))))
        i2 = np.flatnonzero(p2d.pair == k)
        i3 = np.flatnonzero((p3d.pair == target) & ok)
        a, b = _mutual_nn(p2d.positions[i2], proj[i3])
        out += [PointMatch(int(i2[x]), int(i3[y]), CLUSTER_GUIDED) for x, y in zip(a, b)]
    return out


def close_projection_matches(p2d: Flat, p3d: Flat, pose: Pose, delta: float = DELTA_MATCH,
                             existing=()) -> list:
    """All 2D-3D pairs closer than ``delta`` on the sphere, ignoring cluster labels."""
    proj, ok = _project(p3d.positions, pose)
    if len(p2d.positions) == 0 or not np.any(ok):
        return []
    dist = np.arccos(np.clip(p2d.positions @ proj.T, -1.0, 1.0))
    i, j = np.nonzero((dist < delta) & ok[None, :])
    seen = {(m.i2d, m.i3d) for m in existing}
    return [PointMatch(int(a), int(b), CLOSE_PROJECTION) for a, b in zip(i, j) if (a, b) not in seen]


# --- translation --------------------------------------------------------------

def translation_cost(t, R, m2d, m3d) -> float:
    """sum over matches of || m2d - normalize(R (m3d - t)) ||_1."""
    v = (m3d - t) @ R.T
    u = v / np.linalg.norm(v, axis=1, keepdims=True)
    return float(np.abs(m2d - u).sum())


def translation_cost_grad(t, R, m2d, m3d):
    v = (m3d - t) @ R.T
    r = np.linalg.norm(v, axis=1, keepdims=True)
    u = v / r
    s = np.sign(m2d - u)
    # d/dt |m - u|_1 = R^T (I - u u^T) sign(m - u) / |v|
    g = (s - u * np.einsum("ij,ij->i", u, s)[:, None]) / r
    return float(np.abs(m2d - u).sum()), g.sum(axis=0) @ R


class Adam:
    """Adam with a patience-based step halving and best-iterate tracking."""

    def __init__(self, dim, step_size=STEP_SIZE, patience=PATIENCE, b1=0.9, b2=0.999, eps=1e-8):
        self.lr = step_size
        self.patience = patience
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = np.zeros(dim)
        self.v = np.zeros(dim)
        self.n = 0
        self.stall = 0
        self.best = math.inf

    def observe(self, cost) -> bool:
        """Record a cost; returns True when the caller should restart from the best iterate."""
        if cost < self.best:
            self.best = cost
            self.stall = 0
            return False
        self.stall += 1
        if self.stall >= self.patience:
            self.lr *= 0.5
            self.stall = 0
            self.m[:] = 0.0
            self.v[:] = 0.0
            self.n = 0
            return True
        return False

    def step(self, grad):
        self.n += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mh = self.m / (1 - self.b1 ** self.n)
        vh = self.v / (1 - self.b2 ** self.n)
        return -self.lr * mh / (np.sqrt(vh) + self.eps)


def _match_arrays(matches, p2d: Flat, p3d: Flat):
    i2 = np.array([m.i2d for m in matches], dtype=int)
    i3 = np.array([m.i3d for m in matches], dtype=int)
    return p2d.positions[i2].reshape(-1, 3), p3d.positions[i3].reshape(-1, 3)


def refine_translation(matches, pose: Pose, p2d: Flat, p3d: Flat, perm,
                       steps: int = STEPS, step_size: float = STEP_SIZE):
    """Descend on t with per-step match updates; returns the best iterate.

    Returns (t_best, matches_at_best, cost_history).
    """
    if len(matches) < MIN_POINT_MATCHES:
        raise TooFewMatches(f"{len(matches)} point matches")
    R = pose.rotation
    t = pose.translation.copy()
    opt = Adam(3, step_size)
    history = []
    best = (math.inf, t.copy(), list(matches))
    for n in range(steps + 1):
        if len(matches) >= MIN_POINT_MATCHES:
            m2, m3 = _match_arrays(matches, p2d, p3d)
            cost, grad = translation_cost_grad(t, R, m2, m3)
        else:
            cost, grad = math.inf, np.zeros(3)
        history.append(cost)
        if cost < best[0]:
            best = (cost, t.copy(), list(matches))
        if n == steps:
            break
        if opt.observe(cost):
            t = best[1].copy()
            matches = best[2]
            continue
        t = t + opt.step(grad)
        matches = cluster_guided_matches(p2d, p3d, Pose(R, t), perm)
    return best[1], best[2], history


# --- rotation -----------------------------------------------------------------

def derive_line_matches(matches, p2d: Flat, p3d: Flat, perm, lines2d: LineClusters,
                        lines3d: LineClusters) -> list:
    """Two line matches per cluster-guided point match, deduplicated."""
    seen = {}
    for m in matches:
        if m.origin != CLUSTER_GUIDED:
            continue
        a2, b2 = PAIR_TAGS[p2d.pair[m.i2d]]
        a3, b3 = PAIR_TAGS[p3d.pair[m.i3d]]
        par2 = p2d.parents[m.i2d]
        par3 = p3d.parents[m.i3d]
        for c2, l2 in ((a2, par2[0]), (b2, par2[1])):
            c3 = perm[c2]
            l3 = par3[0] if c3 == a3 else par3[1]
            key = ((int(c2), int(l2)), (int(c3), int(l3)))
            if key not in seen:
                seen[key] = LineMatch(lines2d[c2][l2], lines3d[c3][l3], key)
    return list(seen.values())


def _line_match_arrays(line_matches):
    l2 = np.array([m.l2d for m in line_matches]).reshape(-1, 2, 3)
    l3 = np.array([m.l3d for m in line_matches]).reshape(-1, 2, 3)
    return normalize(np.cross(l2[:, 0], l2[:, 1])), normalize(l3[:, 0] - l3[:, 1])


def rotation_cost(R, normals, dirs) -> float:
    """sum over line matches of |<n_2d, R u_3d>|."""
    return float(np.abs(np.einsum("ij,ij->i", normals, dirs @ np.asarray(R).T)).sum())


def rotation_cost_grad(R, normals, dirs):
    """Cost and its gradient w.r.t. a left axis-angle increment exp([w]x) R at w = 0."""
    ru = dirs @ R.T
    c = np.einsum("ij,ij->i", normals, ru)
    # d/dw <n, exp(w) R u> = (R u) x n
    g = (np.sign(c)[:, None] * np.cross(ru, normals)).sum(axis=0)
    return float(np.abs(c).sum()), g


def refine_rotation(line_matches, R, steps: int = STEPS, step_size: float = STEP_SIZE):
    """Manifold descent on the line-direction alignment cost; returns (R_best, history)."""
    if len(line_matches) < MIN_LINE_MATCHES:
        raise TooFewMatches(f"{len(line_matches)} line matches")
    normals, dirs = _line_match_arrays(line_matches)
    if np.linalg.matrix_rank(dirs, tol=1e-6) < 2:
        raise TooFewMatches("line matches are all parallel")
    R = np.asarray(R, dtype=float).copy()
    opt = Adam(3, step_size)
    history = []
    best = (math.inf, R.copy())
    for n in range(steps + 1):
        cost, grad = rotation_cost_grad(R, normals, dirs)
        history.append(cost)
        if cost < best[0]:
            best = (cost, R.copy())
        if n == steps:
            break
        if opt.observe(cost):
            R = best[1].copy()
            continue
        R = orthonormalize(exp_so3(opt.step(grad)) @ R)
    return best[1], history


# --- full refinement ----------------------------------------------------------

def _final_score(pose: Pose, p2d: Flat, p3d: Flat, perm):
    matches = cluster_guided_matches(p2d, p3d, pose, perm)
    if not matches:
        return math.inf, matches
    m2, m3 = _match_arrays(matches, p2d, p3d)
    return translation_cost(pose.translation, pose.rotation, m2, m3) / len(matches), matches


def refine_candidate(cand, q_lines: LineClusters, q_inter: IntersectionClusters, map_lines: LineClusters,
                     map_inter: IntersectionClusters, steps: int = STEPS, step_size: float = STEP_SIZE,
                     delta_match: float = DELTA_MATCH, final_translation: bool = True) -> RefinementResult:
    """Translation, then rotation, then optionally translation again at the refined rotation."""
    p2d, p3d = flatten(q_inter), flatten(map_inter)
    pose = cand.pose
    guided = cluster_guided_matches(p2d, p3d, pose, cand.perm)
    t, final_matches, t_hist = refine_translation(guided, pose, p2d, p3d, cand.perm, steps, step_size)
    R = pose.rotation
    r_hist, t2_hist = [], []
    try:
        lm = derive_line_matches(final_matches, p2d, p3d, cand.perm, q_lines, map_lines)
        R, r_hist = refine_rotation(lm, R, steps, step_size)
    except TooFewMatches:
        pass
    if final_translation and r_hist:
        guided = cluster_guided_matches(p2d, p3d, Pose(R, t), cand.perm)
        if len(guided) >= MIN_POINT_MATCHES:
            t, _, t2_hist = refine_translation(guided, Pose(R, t), p2d, p3d, cand.perm, steps, step_size)
    out = Pose(R, t)
    score, scored = _final_score(out, p2d, p3d, cand.perm)
    close = close_projection_matches(p2d, p3d, out, delta_match, scored)
    return RefinementResult(out, t_hist, r_hist, len(scored), score, len(close), final_trans_cost_history=t2_hist)


def refine(candidates, q_lines: LineClusters, q_inter: IntersectionClusters, map_lines: LineClusters,
           map_inter: IntersectionClusters, steps: int = STEPS, step_size: float = STEP_SIZE,
           delta_match: float = DELTA_MATCH, final_translation: bool = True) -> RefinementResult:
    """Refine every candidate and return the best by normalized intersection cost."""
    results = []
    for k, cand in enumerate(candidates):
        try:
            res = refine_candidate(cand, q_lines, q_inter, map_lines, map_inter, steps, step_size, delta_match,
                                   final_translation)
        except TooFewMatches:
            continue
        res.candidate_index = k
        results.append(res)
    if not results:
        raise AllCandidatesFailed("every candidate had too few matches")
    results.sort(key=lambda r: (r.match_count < MIN_POINT_MATCHES, r.score, r.candidate_index))
    return results[0]
