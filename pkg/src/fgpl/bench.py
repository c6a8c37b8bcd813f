"""Timing of cached search against on-the-fly evaluation."""
import time

import numpy as np

from . import kernels
from .pipeline import Config, build_map, prepare_query
from .scene import generate_scene
from .search import exhaustive_costs, generate_rotation_pool, search


def _median_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def run_bench(lines3d=None, lines2d=None, num_trans: int = 500, grid_level: int = 3,
              exhaustive_sample: int = 24, repeats: int = 5, seed: int = 0) -> dict:
    """Cached + interpolated search vs. exhaustive evaluation over the full pool.

    The exhaustive time is measured on ``exhaustive_sample`` poses spread over
    the pool and extrapolated linearly to every pose.
    """
    if lines3d is None or lines2d is None:
        scene = generate_scene(seed=seed)
        lines3d, lines2d = scene.lines3d, scene.lines2d
    config = Config(grid_level=grid_level, num_trans=num_trans)
    t0 = time.perf_counter()
    cmap = build_map(lines3d, config)
    build_ms = (time.perf_counter() - t0) * 1e3
    query = prepare_query(lines2d, cmap, config)
    pool = generate_rotation_pool(query.directions, cmap.directions, residual_deg=None)
    n_r, n_t = len(pool), len(cmap.translations)

    search(query, cmap, pool=pool)  # warm-up (JIT compilation, grid caches)
    cached_ms = _median_ms(lambda: search(query, cmap, pool=pool), repeats)

    rng = np.random.default_rng(seed)
    picks = rng.choice(n_r * n_t, size=min(exhaustive_sample, n_r * n_t), replace=False)
    t0 = time.perf_counter()
    for flat in picks:
        r, t = divmod(int(flat), n_t)
        exhaustive_costs(query, cmap, [pool[r]], [t])
    per_pose_ms = (time.perf_counter() - t0) * 1e3 / len(picks)
    exhaustive_ms = per_pose_ms * n_r * n_t
    return {
        "backend": kernels.BACKEND,
        "grid_points": len(cmap.grid),
        "rotations": n_r,
        "translations": n_t,
        "poses": n_r * n_t,
        "map_build_ms": build_ms,
        "cached_search_ms": cached_ms,
        "exhaustive_per_pose_ms": per_pose_ms,
        "exhaustive_sampled_poses": len(picks),
        "exhaustive_extrapolated_ms": exhaustive_ms,
        "speedup": exhaustive_ms / cached_ms,
    }
