"""Static grasp planning on a clutter snapshot: transfer, feasibility, stability, priority, sequence."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidWindow
from .geometry import (
    BELT_AXIS,
    Aabb,
    PointCloud,
    Region,
    SweptRegions,
    build_swept_regions,
    region_contains_box,
    transform_box,
)
from .gripper import GraspCandidate, GripperSpec, Stability
from .modeldb import ReferenceModel
from .registration import RegistrationResult

__all__ = [
    "GripperSpec", "GraspCandidate", "Stability", "ReachModel", "PlanOutcome", "PlanTarget", "PlannerConfig",
    "transfer_grasps", "filter_feasible", "classify_stability", "score_priority", "plan_sequence",
    "plan_object", "pregrasp_body_box",
]


@dataclass(frozen=True)
class ReachModel:
    """Kinematic stand-in: an annulus around the base, above the belt, near-vertical approach."""

    base: tuple = (1.0, -0.45, 0.0)
    r_min: float = 0.2
    r_max: float = 0.9
    min_height: float = 0.005
    belt_z: float = 0.0
    max_tilt_deg: float = 60.0

    def is_reachable(self, pose) -> bool:
        p = pose.translation
        r = float(np.hypot(p[0] - self.base[0], p[1] - self.base[1]))
        if not self.r_min <= r <= self.r_max:
            return False
        if p[2] < self.belt_z + self.min_height:
            return False
        return float(-pose.R[2, 2]) >= np.cos(np.radians(self.max_tilt_deg)) - 1e-12


@dataclass(frozen=True)
class PlannerConfig:
    window: float = 5.0  # T, seconds
    mode: str = "virtual"  # "virtual" or "wallclock"
    eval_cost: float = 0.04  # virtual seconds per grasp evaluation
    sweep_extent: float | None = None  # default: remaining belt length
    belt_end: float = 2.0
    normal_k: int = 12
    normal_radius: float = 0.01
    stable_deg: float = 30.0

    def __post_init__(self):
        if self.window <= 0:
            raise InvalidWindow("window must be positive")
        if self.mode not in ("virtual", "wallclock"):
            raise ValueError(f"unknown planning mode {self.mode!r}")


@dataclass(frozen=True, eq=False)
class PlanTarget:
    """What the planner knows about one object: observed cloud plus a completed cloud from its match."""

    id: int
    confidence: float
    observed: PointCloud
    completed: PointCloud
    model: ReferenceModel
    registration: RegistrationResult

    @property
    def aabb(self) -> Aabb:
        return Aabb.from_points(self.completed.points)

    @property
    def fitness(self) -> float:
        return self.registration.fitness

    @property
    def solid(self) -> tuple:
        """Matched model shape placed by the registration."""
        return self.model.shape, self.registration.transform


@dataclass(frozen=True, eq=False)
class PlanOutcome:
    object_id: int
    grasps: tuple  # G_p in preference order
    unstable_count: int
    elapsed: float
    priority: float
    confidence: float = 1.0
    fitness: float = 1.0
    evaluated: int = 0
    no_feasible: bool = False

    @property
    def usable(self) -> tuple:
        """Stable grasps if any, else potential ones, else whatever is feasible."""
        for kind in (Stability.STABLE, Stability.POTENTIAL):
            sel = tuple(g for g in self.grasps if g.stability is kind)
            if sel:
                return sel
        return self.grasps

    def to_dict(self) -> dict:
        return {
            "objectId": self.object_id,
            "feasibleGrasps": len(self.grasps),
            "unstableCount": self.unstable_count,
            "elapsed": self.elapsed,
            "priority": self.priority,
            "confidence": self.confidence,
            "fitness": self.fitness,
            "evaluated": self.evaluated,
            "noFeasibleGrasp": self.no_feasible,
            "grasps": [g.to_dict() for g in self.grasps],
        }


def transfer_grasps(model: ReferenceModel, reg: RegistrationResult) -> list:
    return [g.transformed(reg.transform) for g in model.grasps]


def pregrasp_body_box(grasp: GraspCandidate, gripper: GripperSpec) -> Aabb:
    return transform_box(gripper.body_box(grasp.width), grasp.pregrasp_pose(gripper.backoff_distance))


def _local(points: np.ndarray, grasp: GraspCandidate) -> np.ndarray:
    return (points - grasp.center) @ grasp.pose.R


def _in_fingers(local: np.ndarray, gripper: GripperSpec, width: float) -> bool:
    """Any local-frame point inside either finger box."""
    if len(local) == 0:
        return False
    half = 0.5 * gripper.opening_for(width)
    z0, z1 = gripper.tip_extension - gripper.finger_length, gripper.tip_extension
    ax = np.abs(local[:, 0])
    m = (ax >= half) & (ax <= half + gripper.finger_thickness)
    m &= np.abs(local[:, 1]) <= 0.5 * gripper.finger_width
    m &= (local[:, 2] >= z0) & (local[:, 2] <= z1)
    return bool(m.any())


def _finger_samples(grasp: GraspCandidate, gripper: GripperSpec) -> np.ndarray:
    return grasp.pose.apply(np.concatenate([b.grid() for b in gripper.finger_boxes(grasp.width)]))


def _rules(grasp, target_points, regions, gripper, reach, others, solids):
    """(name, thunk) pairs, cheapest first."""
    cache = {}

    def samples():
        if "s" not in cache:
            cache["s"] = _finger_samples(grasp, gripper)
        return cache["s"]

    def local():
        if "l" not in cache:
            cache["l"] = _local(target_points, grasp)
        return cache["l"]

    def neighbours():
        if others is not None and len(others) and _in_fingers(_local(others, grasp), gripper, grasp.width):
            return False
        for shape, pose in solids or ():
            if np.any(shape.contains(pose.inverse().apply(samples()))):
                return False
        return True

    rules = [
        ("reachable", lambda: bool(reach.is_reachable(grasp.pose)
                                   and reach.is_reachable(grasp.pregrasp_pose(gripper.backoff_distance)))),
        ("belt_clear", lambda: bool(samples()[:, 2].min() >= reach.belt_z)),
        ("fingers_clear", lambda: not _in_fingers(local(), gripper, grasp.width)),
        ("closure_filled", lambda: bool(np.any(gripper.closure_box(grasp.width).contains_points(local())))),
        ("pregrasp_clear", lambda: not region_contains_box(regions, pregrasp_body_box(grasp, gripper))),
    ]
    if (others is not None and len(others)) or solids:
        rules.append(("neighbours_clear", neighbours))
    return rules


def grasp_checks(grasp: GraspCandidate, target_points: np.ndarray, regions: SweptRegions,
                 gripper: GripperSpec, reach: ReachModel, others: np.ndarray | None = None,
                 solids: Sequence | None = None) -> dict:
    """Each feasibility rule evaluated separately (True = passes).

    ``others`` are surface points of the neighbours; ``solids`` their
    (shape, pose) pairs, which also catch a finger buried inside a neighbour.
    """
    return {name: f() for name, f in _rules(grasp, target_points, regions, gripper, reach, others, solids)}


def is_feasible(grasp: GraspCandidate, target_points: np.ndarray, regions: SweptRegions,
                gripper: GripperSpec, reach: ReachModel, others=None, solids=None) -> bool:
    """Same verdict as ``all(grasp_checks(...).values())``, stopping at the first failed rule."""
    return all(f() for _, f in _rules(grasp, target_points, regions, gripper, reach, others, solids))


def filter_feasible(grasps: Sequence[GraspCandidate], target_points, regions: SweptRegions,
                    gripper: GripperSpec, reach: ReachModel, others=None, solids=None) -> list:
    """Keep grasps passing every rule; centers outside the overlap area first, then nearest the centroid."""
    pts = target_points.points if isinstance(target_points, PointCloud) else np.asarray(target_points, dtype=float)
    oth = None
    if others is not None:
        oth = others.points if isinstance(others, PointCloud) else np.asarray(others, dtype=float).reshape(-1, 3)
    centroid = pts.mean(axis=0)
    kept = [g for g in grasps if is_feasible(g, pts, regions, gripper, reach, oth, solids)]
    return _order(kept, regions, centroid)


def _order(kept, regions, centroid):
    def key(item):
        i, g = item
        in_overlap = bool(regions.contains_points(g.center[None, :], Region.OVERLAP)[0])
        return (in_overlap, float(np.linalg.norm(g.center - centroid)), i)

    return [g for _, g in sorted(enumerate(kept), key=key)]


def classify_stability(grasp: GraspCandidate, cloud, k: int = 12, radius: float = 0.01,
                       stable_deg: float = 30.0, tree: cKDTree | None = None) -> Stability:
    """Angle between the closing axis and plane-fit normals at both contacts."""
    if grasp.contacts is None:
        return Stability.POTENTIAL
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    if len(pts) < 3:
        return Stability.POTENTIAL
    tree = tree or cKDTree(pts)
    axis = grasp.closing_axis
    worst = 0.0
    for c in grasp.contacts:
        dist, idx = tree.query(c, k=min(k, len(pts)), distance_upper_bound=radius)
        idx = np.atleast_1d(idx)[np.isfinite(np.atleast_1d(dist))]
        if len(idx) < 3:
            return Stability.POTENTIAL
        nb = pts[idx]
        _, _, vt = np.linalg.svd(nb - nb.mean(axis=0))
        n = vt[2]
        theta = np.degrees(np.arccos(min(1.0, abs(float(n @ axis)))))
        worst = max(worst, theta)
    return Stability.STABLE if worst <= stable_deg else Stability.UNSTABLE


def score_priority(s_c: float, s_f: float, g_p: int, g_u: int, window: float) -> float:
    if window <= 0:
        raise InvalidWindow("window must be positive")
    if g_u > g_p:
        raise ValueError("unstable grasps are a subset of the feasible ones")
    return s_c * s_f * (g_p - g_u) / window


def default_extent(target: Aabb, belt_end: float) -> float:
    return max(belt_end - float(target.lo[0]), 1e-3)


def plan_object(target: PlanTarget, others: Sequence[PlanTarget], gripper: GripperSpec, reach: ReachModel,
                cfg: PlannerConfig = PlannerConfig()) -> PlanOutcome:
    box = target.aabb
    extent = cfg.sweep_extent if cfg.sweep_extent is not None else default_extent(box, cfg.belt_end)
    regions = build_swept_regions(box, [o.aabb for o in others], BELT_AXIS, extent)
    pts = target.completed.points
    oth = np.concatenate([o.completed.points for o in others]) if others else None
    solids = [o.solid for o in others]
    candidates = transfer_grasps(target.model, target.registration)
    tree = cKDTree(target.observed.points) if len(target.observed) >= 3 else None
    kept, evaluated = [], 0
    start = time.perf_counter()
    for g in candidates:
        if cfg.mode == "virtual":
            if (evaluated + 1) * cfg.eval_cost > cfg.window + 1e-12:
                break
        elif time.perf_counter() - start > cfg.window:
            break
        evaluated += 1
        if is_feasible(g, pts, regions, gripper, reach, oth, solids):
            st = classify_stability(g, target.observed, cfg.normal_k, cfg.normal_radius, cfg.stable_deg, tree) \
                if tree is not None else Stability.POTENTIAL
            kept.append(g.with_stability(st))
    elapsed = evaluated * cfg.eval_cost if cfg.mode == "virtual" else time.perf_counter() - start
    ordered = tuple(_order(kept, regions, pts.mean(axis=0)))
    g_u = sum(1 for g in ordered if g.stability is Stability.UNSTABLE)
    p = score_priority(target.confidence, target.fitness, len(ordered), g_u, cfg.window)
    return PlanOutcome(target.id, ordered, g_u, elapsed, p, target.confidence, target.fitness, evaluated, not ordered)


def _pick(outcomes: Sequence[PlanOutcome]) -> PlanOutcome:
    return max(outcomes, key=lambda o: (o.priority, o.confidence * o.fitness, _neg_id(o.object_id)))


def _neg_id(i):
    # lexicographic order on the id's text: the smallest string wins
    s = str(i)
    return tuple(-ord(ch) for ch in s) + (1,)


def plan_sequence(targets: Sequence[PlanTarget], gripper: GripperSpec, reach: ReachModel,
                  cfg: PlannerConfig = PlannerConfig()) -> list:
    """Iterative argmax of the priority score, re-planning the remaining objects after each pick."""
    remaining = list(targets)
    out = []
    while remaining:
        outcomes = [plan_object(t, [o for o in remaining if o is not t], gripper, reach, cfg) for t in remaining]
        best = _pick(outcomes)
        out.append(best)
        remaining = [t for t in remaining if t.id != best.object_id]
    return out
