import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fgpl.errors import EmptyPool, GridMismatch
from fgpl.fields import build_query_grid, fields_at_translation
from fgpl.pipeline import Config, build_map, prepare_query
from fgpl.prep import cluster_lines, extract_intersections_3d
from fgpl.scene import box_edges, room_lines
from fgpl.search import (
    canonicalize_map,
    exhaustive_costs,
    generate_rotation_pool,
    generate_translation_pool,
    rank_candidates,
    search,
    search_rooms,
    translation_grid_counts,
)
from fgpl.sphere import exp_so3, normalize, projection_stats, random_rotation, rotation_geodesic_error

from conftest import SMALL

seeds = st.integers(0, 2**32 - 1)


# --- translation pool ---------------------------------------------------------

def test_translation_pool_unit_cube():
    pool = generate_translation_pool([0, 0, 0], [1, 1, 1], 8)
    expect = np.array(list(itertools.product([0.25, 0.75], repeat=3)))
    assert np.allclose(np.sort(pool, axis=0), np.sort(expect, axis=0))
    assert len({tuple(p) for p in np.round(pool, 12)}) == 8


def test_translation_pool_single():
    assert np.allclose(generate_translation_pool([0, -2, 1], [4, 2, 3], 1), [[2, 0, 2]])


def test_translation_pool_room_sized():
    counts = translation_grid_counts([10, 5, 2.5], 500)
    # uniform spacing 10/16: (16, 8, 4) is the first subdivision reaching 500
    assert counts.tolist() == [16, 8, 4]
    pool = generate_translation_pool([0, 0, 0], [10, 5, 2.5], 500)
    assert len(pool) == 500
    # the 12 dropped centers are the farthest from the middle
    all_c = np.stack(np.meshgrid(*[(np.arange(c) + 0.5) * e / c for c, e in zip(counts, (10, 5, 2.5))],
                                 indexing="ij"), -1).reshape(-1, 3)
    d = lambda p: np.linalg.norm(p - [5, 2.5, 1.25], axis=1)
    kept = {tuple(p) for p in np.round(pool, 9)}
    dropped = np.array([p for p in all_c if tuple(np.round(p, 9)) not in kept])
    assert len(dropped) == 12
    assert d(dropped).min() >= d(pool).max() - 1e-9


@given(st.tuples(*[st.floats(0.5, 12)] * 3), st.integers(1, 600))
def test_translation_pool_recount(extent, n):
    pool = generate_translation_pool([0, 0, 0], extent, n)
    assert len(pool) == n
    assert np.all(pool > 0) and np.all(pool < np.array(extent))
    assert np.array_equal(pool, generate_translation_pool([0, 0, 0], extent, n))
    assert np.prod(translation_grid_counts(extent, n)) >= n


# --- rotation pool ------------------------------------------------------------

def test_rotation_pool_axes():
    pool = generate_rotation_pool(np.eye(3), np.eye(3))
    assert len(pool) == 24
    assert any(np.allclose(c.rotation, np.eye(3)) for c in pool)
    # the survivors are exactly the proper signed permutations
    proper = [c for c in pool if c.residual_deg < 1e-6]
    assert len(proper) == 24
    full = generate_rotation_pool(np.eye(3), np.eye(3), residual_deg=None)
    assert len(full) == 48
    assert sum(c.residual_deg < 1e-6 for c in full) == 24


@given(seeds)
def test_rotation_pool_recovers_known_rotation(seed):
    rng = np.random.default_rng(seed)
    R0 = random_rotation(rng)
    d3d = random_rotation(rng)
    pool = generate_rotation_pool(d3d @ R0.T, d3d)
    assert min(np.abs(c.rotation - R0).max() for c in pool) < 1e-6
    assert len(pool) <= 48


@given(seeds)
def test_rotation_pool_never_empty(seed):
    rng = np.random.default_rng(seed)
    pool = generate_rotation_pool(normalize(rng.normal(size=(3, 3))), normalize(rng.normal(size=(3, 3))), 0.0)
    assert 1 <= len(pool) <= 48


# --- canonical map ------------------------------------------------------------

def small_map(lines, n_trans=8, grid_level=1):
    cl = cluster_lines(lines, np.eye(3), kind="3d")
    inter = extract_intersections_3d(cl)
    pts = lines.reshape(-1, 3)
    trans = generate_translation_pool(pts.min(0), pts.max(0), n_trans)
    return cl, inter, trans, build_query_grid(grid_level)


def test_canonicalize_identity():
    lines = box_edges((0, 0, 0), (3.0, 2.0, 2.5))
    cl, inter, trans, grid = small_map(lines)
    cmap = canonicalize_map(cl, inter, np.eye(3), trans, grid)
    assert np.allclose(cmap.canonical_rotation, np.eye(3))
    for k in range(3):
        assert np.allclose(cmap.lines[k], cl[k])


def test_canonicalize_pre_rotated(rng):
    lines = room_lines((5.0, 4.0, 3.0), 2, rng)
    R0 = random_rotation(rng)
    cl = cluster_lines(lines, np.eye(3), kind="3d")
    inter = extract_intersections_3d(cl)
    cl_r = cluster_lines(lines @ R0.T, R0.T, kind="3d")  # rows R0 e_k
    inter_r = inter.rotated(R0)
    cmap = canonicalize_map(cl_r, inter_r, R0.T, np.zeros((1, 3)) + 1.0, build_query_grid(0))
    for k in range(3):
        assert np.abs(cmap.lines[k] - cl[k]).max() < 1e-9
    assert np.allclose(cmap.directions, np.eye(3), atol=1e-12)


def test_canonicalize_cache_matches_recompute(rng):
    lines = room_lines((5.0, 4.0, 3.0), 2, rng) @ random_rotation(rng).T
    cmap = build_map(lines, SMALL)
    for i in (0, 17, 63):
        direct = fields_at_translation(cmap.lines.clusters, [s.positions for s in cmap.intersections],
                                       cmap.translations[i], cmap.grid, cmap.cache.gamma)
        assert np.array_equal(cmap.cache.fields[i], direct.astype(np.float32))


def test_canonicalize_grid_mismatch(clean_setup):
    _, cmap, _ = clean_setup
    with pytest.raises(GridMismatch):
        canonicalize_map(cmap.original_lines, cmap.original_intersections, cmap.original_directions,
                         cmap.translations, build_query_grid(2), cache=cmap.cache)


# --- search -------------------------------------------------------------------

def test_search_ranks_ground_truth_first(clean_setup):
    scene, cmap, query = clean_setup
    top = search(query, cmap, k=5)
    assert top[0].translation_index == 17
    assert np.allclose(top[0].pose.translation, scene.gt_pose.translation, atol=1e-9)
    assert rotation_geodesic_error(top[0].pose.rotation, scene.gt_pose.rotation) < 2.0
    costs = [c.cost for c in top]
    assert costs == sorted(costs)
    # a perfect match agrees on nearly every query point of the six fields
    assert top[0].cost <= -0.9 * 6 * len(cmap.grid)


def test_search_full_pool_sorted(clean_setup):
    _, cmap, query = clean_setup
    pool = generate_rotation_pool(query.directions, cmap.directions)
    n = len(pool) * len(cmap.translations)
    everything = search(query, cmap, k=n + 10)
    assert len(everything) == n
    keys = [(c.cost, c.translation_index, c.rotation_index) for c in everything]
    assert keys == sorted(keys)
    assert len(set((c.translation_index, c.rotation_index) for c in everything)) == n


def test_rank_candidates_tie_break():
    costs = np.array([[-3, -5, -5], [-5, 0, -1]])
    r, t = rank_candidates(costs, 6)
    # equal costs: lower translation first, then lower rotation
    assert list(zip(r.tolist(), t.tolist())) == [(1, 0), (0, 1), (0, 2), (0, 0), (1, 2), (1, 1)]


def test_search_does_not_project(clean_setup):
    _, cmap, query = clean_setup
    before = projection_stats["calls"]
    search(query, cmap)
    assert projection_stats["calls"] == before


def test_search_is_deterministic(clean_setup):
    _, cmap, query = clean_setup
    a = search(query, cmap, k=20)
    b = search(query, cmap, k=20)
    assert [(c.cost, c.rotation_index, c.translation_index) for c in a] == \
           [(c.cost, c.rotation_index, c.translation_index) for c in b]


def test_search_equivariant_under_grid_symmetry(clean_setup):
    scene, cmap, _ = clean_setup
    phi = (1 + math.sqrt(5)) / 2
    R0 = exp_so3(2 * math.pi / 5 * normalize([-1, phi, 0]))  # maps the icosphere onto itself
    q0 = prepare_query(scene.lines2d, cmap, SMALL)
    q1 = prepare_query(scene.lines2d @ R0.T, cmap, SMALL)

    def by_rotation(q, R_post):
        n = 48 * len(cmap.translations)
        out = {}
        for c in search(q, cmap, k=n):
            R = np.round(R_post @ c.pose.rotation, 6)
            out.setdefault(R.tobytes(), []).append((c.translation_index, c.cost))
        return {k: sorted(v) for k, v in out.items()}

    a, b = by_rotation(q0, R0), by_rotation(q1, np.eye(3))
    assert a.keys() == b.keys()
    for key in a:
        assert a[key] == b[key]


def test_search_errors(clean_setup):
    _, cmap, query = clean_setup
    with pytest.raises(EmptyPool):
        search(query, cmap, pool=[])
    other = build_map(np.concatenate(cmap.original_lines.clusters), Config(num_trans=8, grid_level=2))
    bad = type(cmap)(**{**cmap.__dict__, "grid": other.grid})
    with pytest.raises(GridMismatch):
        search(query, bad)


def test_search_rooms_merges(clean_setup):
    _, cmap, query = clean_setup
    decoy = build_map(room_lines((4.0, 3.0, 2.5), 1, np.random.default_rng(3)), SMALL)
    merged = search_rooms(query, [decoy, cmap], k=5)
    assert len(merged) == 5
    costs = [c.cost for _, c in merged]
    assert costs == sorted(costs)
    assert merged[0][0] == 1
    assert merged[0][1].translation_index == 17


def test_search_costs_agree_with_exhaustive_at_gt(clean_setup):
    # cached cost at the true pose is close to the on-the-fly one
    _, cmap, query = clean_setup
    top = search(query, cmap, k=1)[0]
    pool = generate_rotation_pool(query.directions, cmap.directions)
    exact = exhaustive_costs(query, cmap, [pool[top.rotation_index]], [top.translation_index])
    assert abs(int(exact[0, 0]) - top.cost) <= 0.05 * 6 * len(cmap.grid)
