"""Command line interface.

Exit codes: 0 success, 2 localization failure, 1 I/O or configuration error.
"""
import argparse
import math
import sys
from pathlib import Path

from . import _accel
from .errors import FGPLError
from .fields import FieldCache
from .pipeline import (
    Config,
    build_map,
    dumps,
    evaluate,
    load_json,
    localize,
    map_from_dict,
    map_to_dict,
    pose_from_dict,
    query_from_dict,
    query_to_dict,
    save_json,
    scene_from_dict,
    scene_to_dict,
)
from .scene import NoiseSpec, generate_scene

EXIT_OK, EXIT_IO, EXIT_FAILED = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj, out):
    if out:
        save_json(obj, out)
    else:
        print(dumps(obj))


def _load_map(path):
    d = load_json(path)
    return map_from_dict(d["map"] if "map" in d else d)


def cmd_gen_scene(args):
    noise = NoiseSpec(math.radians(args.sigma_deg), args.dropout, args.clutter)
    scene = generate_scene(tuple(args.room), args.furniture, noise=noise, seed=args.seed)
    save_json(scene_to_dict(scene), args.out)
    if args.map_out:
        save_json(map_to_dict(scene.lines3d), args.map_out)
    if args.query_out:
        save_json(query_to_dict(scene.lines2d), args.query_out)
    return EXIT_OK


def cmd_build_map(args):
    lines3d = _load_map(args.map)
    config = Config(grid_level=args.grid_level, num_trans=args.num_trans, gamma=args.gamma, tau=args.tau)
    cmap = build_map(lines3d, config)
    cmap.cache.save(args.out)
    return EXIT_OK


def cmd_localize(args):
    lines3d = _load_map(args.map)
    q = load_json(args.query)
    gt = pose_from_dict(q["gt_pose"]) if "gt_pose" in q else None
    lines2d = query_from_dict(q["query"] if "query" in q else q)
    if args.cache:
        cache = FieldCache.load(args.cache)
        config = Config(grid_level=cache.grid_level, num_trans=len(cache.translations), gamma=cache.gamma,
                        tau=cache.tau if args.tau is None else args.tau, top_k=args.top_k)
    else:
        cache = None
        config = Config(top_k=args.top_k, **({} if args.tau is None else {"tau": args.tau}))
    cmap = build_map(lines3d, config, cache=cache)
    report = localize(lines2d, cmap, config, gt)
    _emit(report.to_dict(), args.out)
    return EXIT_OK if report.success else EXIT_FAILED


def cmd_evaluate(args):
    paths = sorted(Path(args.scenes_dir).glob("*.json"))
    if not paths:
        raise UsageError(f"no scene files in {args.scenes_dir}")
    scenes = [scene_from_dict(load_json(p)) for p in paths]
    out = evaluate(scenes, Config(), include_timings=not args.no_timings)
    out["scenes"] = [p.name for p in paths]
    _emit(out, args.out)
    return EXIT_OK


def cmd_bench(args):
    from .bench import run_bench

    lines3d = lines2d = None
    if args.scene:
        scene = scene_from_dict(load_json(args.scene))
        lines3d, lines2d = scene.lines3d, scene.lines2d
    out = run_bench(lines3d, lines2d, args.num_trans, args.grid_level, args.sample, args.repeats, args.seed)
    _emit(out, args.out)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="fgpl", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scene", help="write a synthetic scene as JSON")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--room", type=float, nargs=3, default=(6.0, 4.0, 3.0), metavar=("X", "Y", "Z"))
    g.add_argument("--furniture", type=int, default=4)
    g.add_argument("--sigma-deg", type=float, default=0.0, help="endpoint jitter in degrees")
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--clutter", type=float, default=0.0)
    g.add_argument("--map-out", help="also write the 3D map JSON here")
    g.add_argument("--query-out", help="also write the 2D query JSON here")
    g.set_defaults(func=cmd_gen_scene)

    b = sub.add_parser("build-map", help="precompute the distance-field cache of a map")
    b.add_argument("--map", required=True, help="map JSON (or scene JSON)")
    b.add_argument("--out", required=True, help="cache file to write")
    b.add_argument("--grid-level", type=int, default=3)
    b.add_argument("--num-trans", type=int, default=500)
    b.add_argument("--gamma", type=float, default=Config.gamma)
    b.add_argument("--tau", type=float, default=Config.tau)
    b.set_defaults(func=cmd_build_map)

    lo = sub.add_parser("localize", help="localize a 2D query against a map")
    lo.add_argument("--map", required=True)
    lo.add_argument("--cache", help="cache written by build-map; built on the fly if omitted")
    lo.add_argument("--query", required=True, help="query JSON (or scene JSON, which adds errors)")
    lo.add_argument("--top-k", type=int, default=Config.top_k)
    lo.add_argument("--tau", type=float)
    lo.add_argument("--out")
    lo.set_defaults(func=cmd_localize)

    e = sub.add_parser("evaluate", help="localize every scene JSON in a directory")
    e.add_argument("--scenes-dir", required=True)
    e.add_argument("--out")
    e.add_argument("--no-timings", action="store_true", help="omit wall-clock fields (reproducible output)")
    e.set_defaults(func=cmd_evaluate)

    be = sub.add_parser("bench", help="cached vs. exhaustive search timing")
    be.add_argument("--scene", help="scene JSON to use; a generated one otherwise")
    be.add_argument("--num-trans", type=int, default=500)
    be.add_argument("--grid-level", type=int, default=3)
    be.add_argument("--sample", type=int, default=24, help="poses timed exhaustively")
    be.add_argument("--repeats", type=int, default=5)
    be.add_argument("--seed", type=int, default=0)
    be.add_argument("--out")
    be.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _accel.configure_threads()
    try:
        return args.func(args)
    except (OSError, ValueError, KeyError, TypeError, UsageError, FGPLError) as exc:
        print(f"fgpl {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
