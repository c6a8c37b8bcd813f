"""Numba vs. pure-numpy timings of the hot kernels.

    python benchmarks/bench_kernels.py [--repeats 5] [--out timings.json]

Run with FGPL_THREADS=1 to compare single-threaded code paths. The numba
column is unavailable when FGPL_DISABLE_NUMBA is set.
"""
import argparse
import json
import time

import numpy as np

from fgpl import _accel, kernels
from fgpl.fields import build_query_grid
from fgpl.sphere import normalize


def _time(fn, repeats):
    fn()  # warm-up / JIT
    ts = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        ts.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(ts))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--lines", type=int, default=400)
    ap.add_argument("--translations", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()
    threads = _accel.configure_threads()

    rng = np.random.default_rng(args.seed)
    grid = build_query_grid(3)
    q = grid.points
    starts = normalize(rng.normal(size=(args.lines, 3)))
    ends = normalize(starts + 0.3 * rng.normal(size=(args.lines, 3)))
    targets = normalize(rng.normal(size=(args.lines, 3)))
    feats = 6 * len(grid)
    query = rng.random((48, feats)).astype(np.float32)
    cache = rng.random((args.translations, feats)).astype(np.float32)

    cases = {
        "line_field": (lambda: kernels.line_field_numpy(q, starts, ends),
                       lambda: kernels.line_field_numba(q, starts, ends)),
        "point_field": (lambda: kernels.point_field_numpy(q, targets),
                        lambda: kernels.point_field_numba(q, targets)),
        "search_costs": (lambda: kernels.search_costs_numpy(query, cache, 0.1),
                         lambda: kernels.search_costs_numba(query, cache, 0.1)),
    }
    rows = {}
    print(f"threads={threads} numba={'on' if _accel.HAVE_NUMBA else 'off'}")
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, (f_np, f_nb) in cases.items():
        t_np = _time(f_np, args.repeats)
        t_nb = _time(f_nb, args.repeats) if _accel.HAVE_NUMBA else float("nan")
        rows[name] = {"numpy_ms": t_np, "numba_ms": t_nb}
        print(f"{name:<14}{t_np:>12.2f}{t_nb:>12.2f}{t_np / t_nb:>10.1f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"threads": threads, "kernels": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
