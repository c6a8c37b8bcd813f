"""End-to-end localization, evaluation, and file formats."""
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .errors import AllCandidatesFailed, EmptyCluster, FGPLError, InsufficientStructure
from .fields import GAMMA, TAU, FieldCache, build_query_grid, map_fingerprint
from .prep import (
    DELTA_2D,
    DELTA_3D,
    MIN_LINE_LENGTH,
    THETA_CLUS,
    cluster_lines,
    estimate_principal_directions_2d,
    estimate_principal_directions_3d,
    extract_intersections_2d,
    extract_intersections_3d,
    keep_longest_2d,
)
from .refine import DELTA_MATCH, STEP_SIZE, STEPS, refine
from .scene import NoiseSpec, SyntheticScene
from .search import ROT_RESIDUAL_DEG, TOP_K, CanonicalMap, QueryFeatures, canonicalize_map, \
    generate_rotation_pool, generate_translation_pool, search
from .sphere import Pose, rotation_geodesic_error, segments_3d, spherical_segments

FORMAT_VERSION = 1
RECALL_THRESHOLDS = ((0.1, 5.0), (0.2, 10.0), (0.3, 15.0))


@dataclass(frozen=True)
class Config:
    grid_level: int = 3
    num_trans: int = 500
    gamma: float = GAMMA
    tau: float = TAU
    top_k: int = TOP_K
    theta_clus: float = THETA_CLUS
    delta_2d: float = DELTA_2D
    delta_3d: float = DELTA_3D
    delta_match: float = DELTA_MATCH
    min_line_length: float = MIN_LINE_LENGTH
    rot_residual_deg: float = ROT_RESIDUAL_DEG
    steps: int = STEPS
    step_size: float = STEP_SIZE
    final_translation: bool = True


# --- map / query preparation --------------------------------------------------

def build_map(lines3d, config: Config = Config(), cache: FieldCache | None = None) -> CanonicalMap:
    lines3d = segments_3d(lines3d)
    keep = np.linalg.norm(lines3d[:, 1] - lines3d[:, 0], axis=1) >= config.min_line_length
    ratio = float(keep.mean())
    kept = lines3d[keep]
    d3d = estimate_principal_directions_3d(kept)
    clusters = cluster_lines(kept, d3d, config.theta_clus, kind="3d")
    inter = extract_intersections_3d(clusters, config.delta_3d)
    pts = kept.reshape(-1, 3)
    trans = generate_translation_pool(pts.min(axis=0), pts.max(axis=0), config.num_trans)
    grid = build_query_grid(config.grid_level)
    return canonicalize_map(clusters, inter, d3d, trans, grid, config.gamma, config.tau,
                            map_fingerprint(lines3d), cache, ratio)


def prepare_query(lines2d, cmap: CanonicalMap, config: Config = Config()) -> QueryFeatures:
    lines2d = keep_longest_2d(spherical_segments(lines2d), cmap.length_ratio)
    d2d = estimate_principal_directions_2d(lines2d)
    clusters = cluster_lines(lines2d, d2d, config.theta_clus, kind="2d")
    return QueryFeatures(clusters, extract_intersections_2d(clusters, config.delta_2d), d2d)


# --- localization -------------------------------------------------------------

@dataclass
class LocalizationReport:
    success: bool
    failure_stage: str | None = None
    failure_reason: str | None = None
    rotation: list | None = None
    translation: list | None = None
    t_error: float | None = None
    r_error: float | None = None
    search_cost: int | None = None
    top_k_costs: list = field(default_factory=list)
    match_count: int = 0
    trans_cost_history: list = field(default_factory=list)
    rot_cost_history: list = field(default_factory=list)
    timings_ms: dict = field(default_factory=dict)

    @property
    def pose(self) -> Pose | None:
        if self.rotation is None:
            return None
        return Pose(np.array(self.rotation), np.array(self.translation))

    def to_dict(self, include_timings: bool = True) -> dict:
        d = asdict(self)
        if not include_timings:
            d.pop("timings_ms")
        return d


def _ms(t0):
    return (time.perf_counter() - t0) * 1e3


def localize(lines2d, cmap: CanonicalMap, config: Config = Config(), gt_pose: Pose | None = None) -> LocalizationReport:
    timings = {"prep": 0.0, "search": 0.0, "refine": 0.0}
    stage = "prep"
    t0 = time.perf_counter()
    try:
        query = prepare_query(lines2d, cmap, config)
        timings["prep"] = _ms(t0)
        stage = "search"
        t0 = time.perf_counter()
        pool = generate_rotation_pool(query.directions, cmap.directions, config.rot_residual_deg)
        cands = search(query, cmap, config.top_k, config.tau, pool=pool, gamma=config.gamma)
        timings["search"] = _ms(t0)
        stage = "refine"
        t0 = time.perf_counter()
        res = refine(cands, query.lines, query.intersections, cmap.original_lines,
                     cmap.original_intersections, config.steps, config.step_size, config.delta_match,
                     config.final_translation)
        timings["refine"] = _ms(t0)
    except (InsufficientStructure, EmptyCluster, AllCandidatesFailed, FGPLError) as exc:
        timings[stage] = _ms(t0)
        return LocalizationReport(False, stage, type(exc).__name__, timings_ms=timings)
    rep = LocalizationReport(
        True,
        rotation=res.pose.rotation.tolist(),
        translation=res.pose.translation.tolist(),
        search_cost=cands[res.candidate_index].cost,
        top_k_costs=[c.cost for c in cands],
        match_count=res.match_count,
        trans_cost_history=list(res.trans_cost_history),
        rot_cost_history=list(res.rot_cost_history),
        timings_ms=timings,
    )
    if gt_pose is not None:
        rep.t_error = float(np.linalg.norm(res.pose.translation - gt_pose.translation))
        rep.r_error = rotation_geodesic_error(res.pose.rotation, gt_pose.rotation)
    return rep


# --- evaluation ---------------------------------------------------------------

def aggregate(reports) -> dict:
    n = len(reports)
    t_err = np.array([r.t_error if r.success and r.t_error is not None else math.inf for r in reports])
    r_err = np.array([r.r_error if r.success and r.r_error is not None else math.inf for r in reports])
    recall = {f"{t}m_{a:g}deg": float(np.mean((t_err <= t) & (r_err <= a))) for t, a in RECALL_THRESHOLDS}
    out = {
        "count": n,
        "successes": int(sum(r.success for r in reports)),
        "recall": recall,
        "median_t_error": float(np.median(t_err)) if n else None,
        "median_r_error": float(np.median(r_err)) if n else None,
    }
    return out


def evaluate(scenes, config: Config = Config(), threads: int | None = None,
             include_timings: bool = True) -> dict:
    """Localize every scene against its own map and aggregate the metrics."""
    if not scenes:
        raise ValueError("need at least one scene")
    threads = _accel.configure_threads(threads)

    def run(scene: SyntheticScene):
        cmap = build_map(scene.lines3d, config)
        return localize(scene.lines2d, cmap, config, scene.gt_pose)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run, scenes))
    else:
        reports = [run(s) for s in scenes]
    out = {"format_version": FORMAT_VERSION, "config": asdict(config)}
    out.update(aggregate(reports))
    if include_timings:
        out["mean_timings_ms"] = {k: float(np.mean([r.timings_ms.get(k, 0.0) for r in reports]))
                                  for k in ("prep", "search", "refine")}
    out["reports"] = [r.to_dict(include_timings) for r in reports]
    return out


# --- serialization ------------------------------------------------------------

def _encode(obj) -> str:
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return "%.17g" % x if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """JSON with insertion-ordered keys and 17-significant-digit floats."""
    return _encode(obj)


def report_from_dict(d: dict) -> LocalizationReport:
    return LocalizationReport(**d)


def pose_to_dict(pose: Pose) -> dict:
    return {"rotation": pose.rotation.tolist(), "translation": pose.translation.tolist()}


def pose_from_dict(d: dict) -> Pose:
    return Pose(np.array(d["rotation"]), np.array(d["translation"]))


def map_to_dict(lines3d) -> dict:
    return {"format_version": FORMAT_VERSION, "lines": np.asarray(lines3d).reshape(-1, 6).tolist()}


def map_from_dict(d: dict) -> np.ndarray:
    _check_version(d)
    return segments_3d(np.array(d["lines"], dtype=float).reshape(-1, 2, 3))


def query_to_dict(lines2d) -> dict:
    return {"format_version": FORMAT_VERSION, "lines": np.asarray(lines2d).reshape(-1, 2, 3).tolist()}


def query_from_dict(d: dict) -> np.ndarray:
    _check_version(d)
    return spherical_segments(np.array(d["lines"], dtype=float).reshape(-1, 2, 3))


def _check_version(d):
    if d.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported format_version {d.get('format_version')!r}")


def scene_to_dict(scene: SyntheticScene) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": scene.seed,
        "room": list(scene.room),
        "noise": asdict(scene.noise),
        "gt_pose": pose_to_dict(scene.gt_pose),
        "sources": scene.sources.tolist(),
        "map": map_to_dict(scene.lines3d),
        "query": query_to_dict(scene.lines2d),
    }


def scene_from_dict(d: dict) -> SyntheticScene:
    _check_version(d)
    return SyntheticScene(
        map_from_dict(d["map"]), pose_from_dict(d["gt_pose"]), query_from_dict(d["query"]),
        np.array(d.get("sources", []), dtype=int), NoiseSpec(**d.get("noise", {})),
        int(d.get("seed", 0)), tuple(d.get("room", ())),
    )


def load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def save_json(obj, path):
    with open(path, "w") as fh:
        fh.write(dumps(obj))
        fh.write("\n")
