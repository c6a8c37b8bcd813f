"""Hot numeric kernels with numba and pure-numpy implementations.

Both variants of every kernel are importable (``*_numba`` / ``*_numpy``) so
they can be checked against each other; the unsuffixed names dispatch to
numba unless ``FGPL_DISABLE_NUMBA`` is set.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit, prange

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def _unit_normals(starts, ends):
    n = np.cross(starts, ends)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


# --- segment distance ---------------------------------------------------------

def segment_distance_matrix(points, starts, ends):
    """Spherical distance from each point to each minor arc, shape (P, N)."""
    points = np.atleast_2d(points)
    normals = _unit_normals(starts, ends)
    c = np.einsum("ij,ij->i", starts, ends)[None, :]
    xs = points @ starts.T
    xe = points @ ends.T
    inside = (xe - c * xs > 0) & (xs - c * xe > 0)
    perp = np.arcsin(np.clip(np.abs(points @ normals.T), 0.0, 1.0))
    endpoint = np.minimum(np.arccos(np.clip(xs, -1.0, 1.0)), np.arccos(np.clip(xe, -1.0, 1.0)))
    return np.where(inside, perp, endpoint)


def line_field_numpy(points, starts, ends, chunk=4096):
    out = np.full(len(points), np.inf)
    if len(starts) == 0:
        return out
    for lo in range(0, len(starts), chunk):
        d = segment_distance_matrix(points, starts[lo:lo + chunk], ends[lo:lo + chunk])
        np.minimum(out, d.min(axis=1), out=out)
    return out


@njit(cache=True, parallel=True)
def _line_field_nb(points, starts, ends, normals):
    P = points.shape[0]
    N = starts.shape[0]
    out = np.empty(P)
    for k in prange(P):
        x0 = points[k, 0]
        x1 = points[k, 1]
        x2 = points[k, 2]
        # arcsin / arccos are monotone: keep the extreme arguments, convert once
        best_perp = 2.0
        best_end = -2.0
        for j in range(N):
            xs = x0 * starts[j, 0] + x1 * starts[j, 1] + x2 * starts[j, 2]
            xe = x0 * ends[j, 0] + x1 * ends[j, 1] + x2 * ends[j, 2]
            c = starts[j, 0] * ends[j, 0] + starts[j, 1] * ends[j, 1] + starts[j, 2] * ends[j, 2]
            if xe - c * xs > 0 and xs - c * xe > 0:
                xn = abs(x0 * normals[j, 0] + x1 * normals[j, 1] + x2 * normals[j, 2])
                if xn < best_perp:
                    best_perp = xn
            else:
                m = max(xs, xe)
                if m > best_end:
                    best_end = m
        d = np.inf
        if best_perp <= 1.0:
            d = np.arcsin(best_perp)
        if best_end >= -1.0:
            d = min(d, np.arccos(min(best_end, 1.0)))
        elif best_end > -2.0:
            d = min(d, np.pi)
        out[k] = d
    return out


def line_field_numba(points, starts, ends):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if len(starts) == 0:
        return np.full(len(points), np.inf)
    starts = np.ascontiguousarray(starts, dtype=np.float64)
    ends = np.ascontiguousarray(ends, dtype=np.float64)
    return _line_field_nb(points, starts, ends, _unit_normals(starts, ends))


# --- point distance -----------------------------------------------------------

def point_field_numpy(points, targets, chunk=4096):
    out = np.full(len(points), np.inf)
    if len(targets) == 0:
        return out
    for lo in range(0, len(targets), chunk):
        dots = points @ targets[lo:lo + chunk].T
        np.minimum(out, np.arccos(np.clip(dots.max(axis=1), -1.0, 1.0)), out=out)
    return out


@njit(cache=True, parallel=True)
def _point_field_nb(points, targets):
    P = points.shape[0]
    M = targets.shape[0]
    out = np.empty(P)
    for k in prange(P):
        best = -2.0
        for j in range(M):
            d = points[k, 0] * targets[j, 0] + points[k, 1] * targets[j, 1] + points[k, 2] * targets[j, 2]
            if d > best:
                best = d
        out[k] = np.arccos(min(max(best, -1.0), 1.0))
    return out


def point_field_numba(points, targets):
    points = np.ascontiguousarray(points, dtype=np.float64)
    if len(targets) == 0:
        return np.full(len(points), np.inf)
    return _point_field_nb(points, np.ascontiguousarray(targets, dtype=np.float64))


# --- robust inlier counting ---------------------------------------------------

def search_costs_numpy(query, cache, tau):
    """cost[r, t] = -#{k : |query[r, k] - cache[t, k]| < tau}."""
    query = np.asarray(query, dtype=np.float32)
    cache = np.asarray(cache, dtype=np.float32)
    tau = np.float32(tau)
    out = np.empty((query.shape[0], cache.shape[0]), dtype=np.int64)
    with np.errstate(invalid="ignore"):
        for r in range(query.shape[0]):
            out[r] = -np.count_nonzero(np.abs(cache - query[r]) < tau, axis=1)
    return out


@njit(cache=True, parallel=True)
def _search_costs_nb(query, cache, tau):
    R, F = query.shape
    T = cache.shape[0]
    out = np.empty((R, T), dtype=np.int64)
    for r in prange(R):
        for t in range(T):
            c = 0
            for k in range(F):
                if abs(query[r, k] - cache[t, k]) < tau:
                    c += 1
            out[r, t] = -c
    return out


def search_costs_numba(query, cache, tau):
    return _search_costs_nb(
        np.ascontiguousarray(query, dtype=np.float32),
        np.ascontiguousarray(cache, dtype=np.float32),
        np.float32(tau),
    )


if HAVE_NUMBA:
    line_field = line_field_numba
    point_field = point_field_numba
    search_costs = search_costs_numba
else:
    line_field = line_field_numpy
    point_field = point_field_numpy
    search_costs = search_costs_numpy
