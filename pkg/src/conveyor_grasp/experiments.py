"""End-to-end scenario runs, speed-estimation trials and run reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .dyn_planner import DynObject, StepResult, TimingModel, run_steps
from .errors import (
    CenterlineNotReached,
    ClutterNeverArrives,
    ConfigError,
    DegenerateInput,
    EmptyClutter,
    EmptySelection,
    NoMatches,
)
from .geometry import BELT_AXIS, PointCloud, Pose
from .gripper import GripperSpec
from .modeldb import Catalog, ScreenRequest, StubScreener, default_catalog, screen_candidates
from .perception import CameraSpec, belt_region_px, default_global_camera, export_frame, render, segment_global
from .registration import RegParams, register
from .sim_world import (
    ARRANGEMENTS,
    CLUTTER_SETS,
    PATTERNS,
    SPEED_MODES,
    GraspOutcome,
    Scenario,
    WorldState,
    advance_to,
    execute_grasp,
    generate_scenario,
)
from .static_planner import PlannerConfig, PlanTarget, ReachModel, plan_sequence
from .tracker import complete_report, detect_key_times, place_local_camera, track_source

FAILURE_KINDS = ("OcclusionMatchFailure", "DeadlineMiss", "DynamicCollision")


def speed_mode(speed: float) -> str:
    for name, v in SPEED_MODES.items():
        if abs(v - speed) < 1e-9:
            return name
    return "low" if speed < 0.5 * (SPEED_MODES["low"] + SPEED_MODES["high"]) else "high"


@dataclass(frozen=True)
class RunConfig:
    scenarios: tuple = ()
    camera: CameraSpec = CameraSpec()
    gripper: GripperSpec = GripperSpec()
    timing: TimingModel = TimingModel()
    planner: PlannerConfig = PlannerConfig()
    reach: ReachModel = ReachModel()
    seed: int = 0
    speed_bias: float = 0.0  # relative error injected into the speed estimate
    screen_k: int = 5
    static_x: float = 1.0  # clutter front x where static planning takes place
    targets: tuple = (("low", 2), ("high", 1))

    def targets_for(self, speed: float) -> int:
        return dict(self.targets)[speed_mode(speed)]


def full_grid(speeds: Sequence[str] = ("low", "high"), seed: int = 0) -> tuple:
    return tuple(
        Scenario(p, c, a, SPEED_MODES[s], seed)
        for p in PATTERNS for c in CLUTTER_SETS for a in ARRANGEMENTS for s in speeds
    )


# ------------------------------------------------------------------ static stage

@dataclass(frozen=True, eq=False)
class StaticStage:
    """Everything computed from the global view; independent of belt speed."""

    world: WorldState
    shift: np.ndarray  # world t=0 -> static planning position
    targets: tuple  # PlanTarget at the static position
    sequence: tuple  # PlanOutcome in pick order
    unmatched: tuple  # instance ids with no usable registration
    clouds: tuple  # completed clouds at t=0, for camera placement


def _register_instance(inst, catalog, screener, cfg: RunConfig):
    try:
        resp = screen_candidates(screener, ScreenRequest(catalog.name, inst.category, cfg.screen_k))
    except NoMatches:
        return None
    best = None
    for mid in resp.candidate_ids:
        model = catalog.model(mid)
        try:
            reg = register(model.surface, inst.cloud, RegParams(seed=cfg.seed))
        except DegenerateInput:
            continue
        key = (reg.scene_inlier_ratio, reg.fitness)
        if best is None or key > best[0]:
            best = (key, model, reg)
    return None if best is None else best[1:]


def static_stage(scenario: Scenario, cfg: RunConfig, catalog: Catalog, screener, frames_dir=None) -> StaticStage:
    world = generate_scenario(scenario, catalog)
    cam = default_global_camera()
    spec = cfg.camera
    rng = np.random.default_rng([cfg.seed, scenario.placement_seed() % (2**32)])
    frame = render(world, cam, spec, rng)
    if frames_dir is not None:
        export_frame(frame, f"{frames_dir}/{scenario.key}_global")
    instances = segment_global(frame, belt_region_px(cam, spec, world.belt_bounds))
    matched, unmatched = [], []
    for inst in instances:
        got = _register_instance(inst, catalog, screener, cfg)
        if got is None:
            unmatched.append(inst.id)
            continue
        model, reg = got
        completed = PointCloud(reg.transform.apply(model.surface.points), reg.transform.rotate(model.surface.normals))
        matched.append((inst, model, reg, completed))
    if not matched:
        return StaticStage(world, np.zeros(3), (), (), tuple(unmatched), ())
    front = max(float(c.points[:, 0].max()) for *_, c in matched)
    shift = (cfg.static_x - front) * BELT_AXIS
    move = Pose.from_translation(shift)
    targets = tuple(
        PlanTarget(
            inst.id, inst.confidence,
            PointCloud(inst.cloud.points + shift),
            PointCloud(completed.points + shift, completed.normals),
            model, replace(reg, transform=move @ reg.transform),
        )
        for inst, model, reg, completed in matched
    )
    seq = plan_sequence(targets, cfg.gripper, cfg.reach, cfg.planner)
    return StaticStage(world, shift, targets, tuple(seq), tuple(unmatched), tuple(c for *_, c in matched))


# ------------------------------------------------------------------ tracking

def track(world: WorldState, clouds, spec: CameraSpec, seed: int = 0, frames_dir=None, key: str = "scene"):
    """Local observation pose and completed TrackReport for a clutter moving on ``world``."""
    pose = place_local_camera(clouds, spec=spec)
    horizon = (world.belt_bounds.hi[0] - world.belt_bounds.lo[0]) / world.belt_speed
    max_frames = int(np.ceil(horizon * spec.frame_rate)) + 1

    def frame_at(k):
        rng = np.random.default_rng([seed, k]) if spec.noise_sigma > 0 else None
        return render(advance_to(world, k / spec.frame_rate), pose.camera_pose, spec, rng)

    if spec.noise_sigma > 0:
        partial = detect_key_times((frame_at(k) for k in range(max_frames)), spec)
    else:
        partial = track_source(frame_at, spec, max_frames)
    if frames_dir is not None:
        for name, t in (("t1", partial.t1), ("t2", partial.t2)):
            export_frame(frame_at(int(round(t * spec.frame_rate))), f"{frames_dir}/{key}_local_{name}")
    return pose, complete_report(partial, pose, spec)


# ------------------------------------------------------------------ one scenario

@dataclass(frozen=True)
class ScenarioRow:
    pattern: str
    clutter_set: str
    arrangement: str
    speed_mode: str
    grasps_performed: int
    grasps_succeeded: int
    objects_targeted: int
    failures: tuple = ()
    speed_estimate: Optional[float] = None
    steps: tuple = ()

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "clutterSet": self.clutter_set,
            "arrangement": self.arrangement,
            "speedMode": self.speed_mode,
            "graspsPerformed": self.grasps_performed,
            "graspsSucceeded": self.grasps_succeeded,
            "objectsTargeted": self.objects_targeted,
            "failures": [dict(kind=k, detail=d) for k, d in self.failures],
            "speedEstimate": self.speed_estimate,
            "steps": list(self.steps),
        }

    @property
    def sort_key(self):
        # full content breaks ties, so duplicate keys still sort the same way
        return (self.pattern, self.clutter_set, _arr_num(self.arrangement), self.speed_mode,
                json.dumps(self.to_dict(), sort_keys=True))


def _arr_num(a: str):
    digits = "".join(ch for ch in a if ch.isdigit())
    return (int(digits) if digits else 0, a)


_OUTCOME_FAILURE = {
    GraspOutcome.MISS: "OcclusionMatchFailure",
    GraspOutcome.COLLISION: "DynamicCollision",
}


def run_scenario(scenario: Scenario, cfg: RunConfig, catalog: Catalog | None = None, screener=None,
                 cache: dict | None = None, frames_dir=None) -> ScenarioRow:
    catalog = catalog or default_catalog()
    screener = screener or StubScreener(catalog)
    mode = speed_mode(scenario.belt_speed)
    wanted = cfg.targets_for(scenario.belt_speed)
    ckey = (scenario.key, scenario.seed, scenario.model_ids)
    stage = cache.get(ckey) if cache is not None else None
    if stage is None:
        stage = static_stage(scenario, cfg, catalog, screener, frames_dir)
        if cache is not None:
            cache[ckey] = stage
    world = replace(stage.world, belt_speed=scenario.belt_speed)
    failures = []

    def row(performed=0, succeeded=0, est=None, steps=()):
        return ScenarioRow(scenario.pattern, scenario.clutter_set, scenario.arrangement, mode,
                           performed, succeeded, wanted, tuple(failures), est, tuple(steps))

    usable = [o for o in stage.sequence if o.grasps]
    for oid in stage.unmatched:
        failures.append(("OcclusionMatchFailure", f"object {oid}: no registered model"))
    if not stage.clouds:
        return row()
    try:
        pose, rep = track(world, stage.clouds, cfg.camera, cfg.seed, frames_dir, scenario.key)
    except (ClutterNeverArrives, CenterlineNotReached, EmptyClutter, EmptySelection) as exc:
        failures.append(("DeadlineMiss", f"tracking: {type(exc).__name__}"))
        return row()
    speed = rep.speed * (1.0 + cfg.speed_bias)
    p2 = np.array(rep.p2)
    p0 = np.array([_static_front(stage), p2[1], p2[2]])
    grasps = {o.object_id: o.usable for o in usable}
    dyn = {t.id: DynObject(t.id, t.completed.points, tuple(grasps.get(t.id, ())), t.solid) for t in stage.targets}
    chosen = [dyn[o.object_id] for o in usable[:wanted]]
    for _ in range(wanted - len(chosen)):
        failures.append(("DeadlineMiss", "plan: no object left with a feasible grasp"))
    state = {"world": world}
    outcomes = {}

    def execute(res: StepResult) -> bool:
        outcome, w = execute_grasp(state["world"], res.grasp, res.execute_at, res.object_id, cfg.gripper)
        state["world"] = w
        outcomes[res.object_id] = outcome
        return outcome is GraspOutcome.SUCCESS

    results = run_steps(chosen, list(dyn.values()), speed, p2, rep.t2, p0, cfg.timing, cfg.reach, cfg.gripper,
                        pose.position, float(world.belt_bounds.hi[0]), execute) if chosen else []
    performed = succeeded = 0
    steps = []
    for r in results:
        steps.append({"objectId": r.object_id, "n": r.n, "executeAt": r.execute_at if r.executed else None,
                      "outcome": r.outcome or r.error})
        if not r.executed:
            failures.append(("DeadlineMiss", f"object {r.object_id}: {r.error}"))
            continue
        performed += 1
        o = outcomes[r.object_id]
        if o is GraspOutcome.SUCCESS:
            succeeded += 1
        else:
            failures.append((_OUTCOME_FAILURE[o], f"object {r.object_id}: {o.value}"))
    return row(performed, succeeded, float(speed), steps)


def _static_front(stage: StaticStage) -> float:
    return max(float(t.completed.points[:, 0].max()) for t in stage.targets)


# ------------------------------------------------------------------ reports

def _rate(num: int, den: int):
    return "n/a" if den == 0 else num / den


@dataclass(frozen=True)
class RunReport:
    rows: tuple
    seed: int = 0

    def aggregates(self) -> list:
        cells = {}
        for r in self.rows:
            for key in ((r.pattern, r.clutter_set, r.speed_mode), (r.pattern, "Average", r.speed_mode)):
                c = cells.setdefault(key, [0, 0, 0])
                c[0] += r.grasps_succeeded
                c[1] += r.grasps_performed
                c[2] += r.objects_targeted
        order = lambda k: (k[0], k[1] == "Average", k[1], k[2])  # noqa: E731
        return [
            {"pattern": k[0], "clutterSet": k[1], "speedMode": k[2], "SR": _rate(s, p), "ER": _rate(p, t),
             "succeeded": s, "performed": p, "targeted": t}
            for k, (s, p, t) in sorted(cells.items(), key=lambda kv: order(kv[0]))
        ]

    def cells(self) -> list:
        return [a for a in self.aggregates() if a["clutterSet"] != "Average"]

    def to_dict(self) -> dict:
        rows = sorted(self.rows, key=lambda r: r.sort_key)
        return {"seed": self.seed, "rows": [r.to_dict() for r in rows], "aggregates": self.aggregates()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["pattern", "clutterSet", "arrangement", "speedMode", "graspsPerformed", "graspsSucceeded",
                    "objectsTargeted", "failures"])
        for r in sorted(self.rows, key=lambda r: r.sort_key):
            w.writerow([r.pattern, r.clutter_set, r.arrangement, r.speed_mode, r.grasps_performed,
                        r.grasps_succeeded, r.objects_targeted, ";".join(k for k, _ in r.failures)])
        return buf.getvalue()

    def table(self) -> str:
        """SR/ER per pattern and clutter set, one column group per speed mode."""
        aggs = {(a["pattern"], a["clutterSet"], a["speedMode"]): a for a in self.aggregates()}
        modes = sorted({k[2] for k in aggs}, key=lambda m: (m != "low", m))
        sets = sorted({k[1] for k in aggs if k[1] != "Average"}) + ["Average"]
        fmt = lambda v: "  n/a" if v == "n/a" else f"{100 * v:5.1f}"  # noqa: E731
        head = "pattern metric " + " | ".join(" ".join(f"{s:>5}" for s in sets) + f"  [{m}]" for m in modes)
        lines = [head]
        for p in sorted({k[0] for k in aggs}):
            for metric in ("SR", "ER"):
                parts = []
                for m in modes:
                    vals = [fmt(aggs[(p, s, m)][metric]) if (p, s, m) in aggs else "    -" for s in sets]
                    parts.append(" ".join(vals) + " " * (len(m) + 3))
                lines.append(f"{p:<7} {metric:<6} " + " | ".join(parts))
        return "\n".join(lines)


def run_suite(cfg: RunConfig, catalog: Catalog | None = None, screener=None, frames_dir=None,
              progress=None, cache: dict | None = None) -> RunReport:
    catalog = catalog or default_catalog()
    screener = screener or StubScreener(catalog)
    cache = {} if cache is None else cache
    rows = []
    for i, sc in enumerate(cfg.scenarios):
        rows.append(run_scenario(sc, cfg, catalog, screener, cache, frames_dir))
        if progress is not None:
            progress(i + 1, len(cfg.scenarios), sc)
    return RunReport(tuple(rows), cfg.seed)


# ------------------------------------------------------------------ speed evaluation

@dataclass(frozen=True)
class SpeedTrial:
    mode: str
    trial: int
    scenario: str
    true_speed: float
    estimate: float
    t1: float
    t2: float

    def to_dict(self) -> dict:
        return {"mode": self.mode, "trial": self.trial, "scenario": self.scenario, "trueSpeed": self.true_speed,
                "estimate": self.estimate, "t1": self.t1, "t2": self.t2}


def speed_eval(modes: Sequence[str] = ("low", "high"), trials: int = 10, seed: int = 0,
               camera: CameraSpec = CameraSpec(), catalog: Catalog | None = None) -> list:
    """Randomized clutter per trial, true-shape clouds for camera placement."""
    catalog = catalog or default_catalog()
    out = []
    for mode in modes:
        if mode not in SPEED_MODES:
            raise ValueError(f"unknown speed mode {mode!r}")
        rng = np.random.default_rng([seed, list(SPEED_MODES).index(mode)])
        for k in range(trials):
            pattern = sorted(PATTERNS)[int(rng.integers(len(PATTERNS)))]
            cset = CLUTTER_SETS[int(rng.integers(len(CLUTTER_SETS)))]
            arr = ARRANGEMENTS[int(rng.integers(len(ARRANGEMENTS)))]
            sc = Scenario(pattern, cset, arr, SPEED_MODES[mode], int(rng.integers(2**31)))
            world = generate_scenario(sc, catalog)
            _, rep = track(world, [o.surface() for o in world.objects], camera, seed)
            out.append(SpeedTrial(mode, k, sc.key, SPEED_MODES[mode], float(rep.speed), rep.t1, rep.t2))
    return out


def summarize_speed(trials: Sequence[SpeedTrial]) -> dict:
    res = {}
    for mode in dict.fromkeys(t.mode for t in trials):
        est = np.array([t.estimate for t in trials if t.mode == mode])
        res[mode] = {"n": len(est), "mean": float(est.mean()), "std": float(est.std())}
    return res


# ------------------------------------------------------------------ config files

_CAMERA_KEYS = {"fovAlongDeg": "fov_along", "fovAcrossDeg": "fov_across", "height": "height", "width": "width",
                "frameRate": "frame_rate", "noiseSigma": "noise_sigma"}
_TIMING_KEYS = {"approachTime": "approach_time", "interval": "interval", "perGraspCost": "per_grasp_cost",
                "moveSpeed": "move_speed", "moveOverhead": "move_overhead", "closeTime": "close_time",
                "placeTime": "place_time", "mode": "mode"}
_GRIPPER_KEYS = {"maxOpening": "max_opening", "fingerThickness": "finger_thickness", "fingerWidth": "finger_width",
                 "fingerLength": "finger_length", "tipExtension": "tip_extension", "palmSize": "palm_size",
                 "clearance": "clearance", "backoffDistance": "backoff_distance"}
_PLANNER_KEYS = {"window": "window", "mode": "mode", "evalCost": "eval_cost", "sweepExtent": "sweep_extent",
                 "beltEnd": "belt_end", "stableDeg": "stable_deg"}


def _overrides(section: str, raw, keys: dict) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected an object")
    out = {}
    for k, v in raw.items():
        name = keys.get(k) or (k if k in keys.values() else None)
        if name is None:
            raise ConfigError(f"{section}.{k}: unknown field")
        if name in ("fov_along", "fov_across"):
            v = float(np.radians(v))
        if name == "palm_size":
            v = tuple(v)
        out[name] = v
    return out


def _build(section: str, cls, base, over: dict):
    try:
        return replace(base, **over) if over else base
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _scenarios(raw) -> tuple:
    if raw is None:
        return ()
    if raw == "grid":
        return full_grid()
    if not isinstance(raw, list):
        raise ConfigError('scenarios: expected a list or "grid"')
    out = []
    for i, d in enumerate(raw):
        where = f"scenarios[{i}]"
        if not isinstance(d, dict):
            raise ConfigError(f"{where}: expected an object")
        if "pattern" not in d:
            raise ConfigError(f"{where}.pattern: missing")
        d = dict(d)
        if "speedMode" in d:
            mode = d.pop("speedMode")
            if mode not in SPEED_MODES:
                raise ConfigError(f"{where}.speedMode: unknown mode {mode!r}")
            d["beltSpeed"] = SPEED_MODES[mode]
        try:
            out.append(Scenario.from_dict(d))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"{where}: {exc}") from None
    return tuple(out)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parse a JSON run config; errors carry the line/column or the offending field."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be an object")
    known = {"scenarios", "camera", "gripper", "timing", "planner", "seed", "speedBias"}
    for k in raw:
        if k not in known:
            raise ConfigError(f"{source}: {k}: unknown field")
    cfg = RunConfig(
        scenarios=_scenarios(raw.get("scenarios")),
        camera=_build("camera", CameraSpec, CameraSpec(), _overrides("camera", raw.get("camera"), _CAMERA_KEYS)),
        gripper=_build("gripper", GripperSpec, GripperSpec(), _overrides("gripper", raw.get("gripper"), _GRIPPER_KEYS)),
        timing=_build("timing", TimingModel, TimingModel(), _overrides("timing", raw.get("timing"), _TIMING_KEYS)),
        planner=_build("planner", PlannerConfig, PlannerConfig(), _overrides("planner", raw.get("planner"), _PLANNER_KEYS)),
    )
    try:
        seed = int(raw.get("seed", 0))
        bias = float(raw.get("speedBias", 0.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return replace(cfg, seed=seed, speed_bias=bias)


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))
