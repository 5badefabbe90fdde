"""Recurrent future-state prediction and timed grasp execution on the moving clutter."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import BeltExhausted, NoFeasibleGrasp, NonBeltDisplacement
from .geometry import BELT_AXIS, Aabb, build_swept_regions
from .gripper import GraspCandidate, GripperSpec
from .static_planner import ReachModel, filter_feasible


@dataclass(frozen=True)
class TimingModel:
    approach_time: float = 0.5  # t_a
    interval: float = 1.0  # Δt
    per_grasp_cost: float = 0.001  # virtual seconds per grasp examined (t_p)
    move_speed: float = 0.5  # m/s for t_m
    move_overhead: float = 0.3
    close_time: float = 0.5
    place_time: float = 3.0
    mode: str = "virtual"

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if k != "mode" and v < 0:
                raise ValueError(f"{k} must be nonnegative")
        if self.interval <= 0:
            raise ValueError("interval must be positive")
        if self.mode not in ("virtual", "wallclock"):
            raise ValueError(f"unknown timing mode {self.mode!r}")

    def move_time(self, a, b) -> float:
        return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))) / self.move_speed + self.move_overhead

    def execute_time(self, t2: float, n: int) -> float:
        return t2 + (n - 2) * self.interval


@dataclass(frozen=True, eq=False)
class Attempt:
    n: int
    p_n: tuple
    feasible: int
    t_p: float
    t_m: float
    t_c: float


@dataclass(frozen=True, eq=False)
class StepResult:
    object_id: int
    grasp: Optional[GraspCandidate]
    execute_at: float
    n: int
    attempts: tuple
    t2: float
    p2: tuple
    duration: float = 0.0
    error: Optional[str] = None
    outcome: Optional[str] = None

    @property
    def executed(self) -> bool:
        return self.grasp is not None

    def to_dict(self) -> dict:
        return {
            "objectId": self.object_id,
            "executeAt": self.execute_at,
            "n": self.n,
            "attempts": len(self.attempts),
            "t2": self.t2,
            "p2": list(self.p2),
            "duration": self.duration,
            "error": self.error,
            "outcome": self.outcome,
            "grasp": None if self.grasp is None else self.grasp.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class DynObject:
    """An object as known at the static-planning position p0."""

    id: int
    cloud: np.ndarray
    grasps: tuple = ()
    solid: Optional[tuple] = None  # (shape, pose) at p0, when known

    @property
    def aabb(self) -> Aabb:
        return Aabb.from_points(self.cloud)


def translate_grasps(grasps: Sequence[GraspCandidate], p0, pn, belt_axis=BELT_AXIS, tol: float = 1e-9) -> list:
    shift = np.asarray(pn, dtype=float) - np.asarray(p0, dtype=float)
    axis = np.asarray(belt_axis, dtype=float)
    lateral = shift - (shift @ axis) * axis
    if np.linalg.norm(lateral) > tol:
        raise NonBeltDisplacement(f"displacement {shift.tolist()} leaves the belt axis")
    if not np.any(shift):
        return list(grasps)
    return [g.translated(shift) for g in grasps]


def feasible_at(target: DynObject, others: Sequence[DynObject], shift: np.ndarray, grasps: Sequence[GraspCandidate],
                gripper: GripperSpec, reach: ReachModel, belt_end: float) -> list:
    box = target.aabb.translated(shift)
    extent = max(belt_end - float(box.lo[0]), 1e-3)
    regions = build_swept_regions(box, [o.aabb.translated(shift) for o in others], BELT_AXIS, extent)
    oth = np.concatenate([o.cloud for o in others]) + shift if others else None
    solids = [(o.solid[0], o.solid[1].translated(shift)) for o in others if o.solid is not None]
    return filter_feasible(grasps, target.cloud + shift, regions, gripper, reach, oth, solids)


def plan_step(target: DynObject, others: Sequence[DynObject], speed: float, p2, t2: float, p0,
              timing: TimingModel, reach: ReachModel, gripper: GripperSpec, observe_at,
              belt_end: float = 2.0, max_n: int = 10_000) -> StepResult:
    """Find the first future state n whose planning + approach time fits before (n-2)·Δt."""
    if not target.grasps:
        raise NoFeasibleGrasp(f"object {target.id} has no static grasps")
    if speed <= 0:
        raise ValueError("speed must be positive")
    axis = BELT_AXIS
    p2 = np.asarray(p2, dtype=float)
    p0 = np.asarray(p0, dtype=float)
    n = 3
    t_c = 0.0
    attempts = []
    any_feasible = False
    observe_at = np.asarray(observe_at, dtype=float)
    tool = observe_at  # the robot waits at its last pregrasp pose between attempts
    while n <= max_n:
        p_n = p2 + speed * (n - 2) * timing.interval * axis
        if p_n[0] > belt_end:
            break
        start = time.perf_counter()
        moved = translate_grasps(target.grasps, p0, p_n)
        shift = p_n - p0
        g_f = feasible_at(target, others, shift, moved, gripper, reach, belt_end)
        if timing.mode == "virtual":
            t_p = timing.per_grasp_cost * len(moved)
        else:
            t_p = time.perf_counter() - start
        best = None
        t_m = 0.0
        if g_f:
            any_feasible = True
            d = [float(np.linalg.norm(g.center - observe_at)) for g in g_f]
            best = g_f[int(np.argmin(d))]
            pre = best.pregrasp_pose(gripper.backoff_distance).translation
            t_m = timing.move_time(tool, pre)
            tool = pre
        t_c += t_p + t_m
        attempts.append(Attempt(n, tuple(p_n), len(g_f), t_p, t_m, t_c))
        if best is not None and t_c + timing.approach_time < (n - 2) * timing.interval:
            return StepResult(target.id, best, timing.execute_time(t2, n), n, tuple(attempts), t2, tuple(p2))
        n += 1
    if any_feasible or not attempts:
        raise BeltExhausted(f"object {target.id}: the clutter leaves the belt before a grasp fits")
    raise NoFeasibleGrasp(f"object {target.id}: no feasible grasp at any predicted position")


def brute_force_n(grasp_counts: Callable[[int], tuple], timing: TimingModel, t_p_of: Callable[[int], float],
                  n_max: int = 10) -> Optional[int]:
    """Reference search: smallest n in 3..n_max whose accumulated time satisfies the condition.

    ``grasp_counts(n)`` gives (feasible count, move time of the chosen grasp) at state n.
    """
    total = 0.0
    for n in range(3, n_max + 1):
        feasible, t_m = grasp_counts(n)
        total += t_p_of(n) + (t_m if feasible else 0.0)
        if feasible and total + timing.approach_time < (n - 2) * timing.interval:
            return n
    return None


def run_steps(sequence: Sequence[DynObject], world_objects: Sequence[DynObject], speed: float, p2, t2: float, p0,
              timing: TimingModel, reach: ReachModel, gripper: GripperSpec, observe_at, belt_end: float = 2.0,
              execute: Optional[Callable[[StepResult], bool]] = None) -> list:
    """Plan and execute one timed step per object in ``sequence``, delaying t2 by each step's duration.

    ``execute`` performs the grasp and reports success; successful picks are
    removed from later collision checks.  Step errors are recorded, not raised.
    """
    remaining = {o.id: o for o in world_objects}
    p2 = np.asarray(p2, dtype=float)
    results = []
    for target in sequence:
        others = [o for oid, o in remaining.items() if oid != target.id]
        try:
            res = plan_step(target, others, speed, p2, t2, p0, timing, reach, gripper, observe_at, belt_end)
        except (BeltExhausted, NoFeasibleGrasp) as exc:
            spent = len(_attempts_until_exhausted(p2, speed, timing, belt_end)) * timing.interval
            results.append(StepResult(target.id, None, float("nan"), -1, (), t2, tuple(p2), spent,
                                      type(exc).__name__))
            t2 += spent
            p2 = p2 + speed * spent * BELT_AXIS
            continue
        duration = (res.execute_at - t2) + timing.close_time + timing.place_time
        ok = execute(res) if execute is not None else True
        res = replace(res, duration=duration, outcome=None if execute is None else ("Success" if ok else "Failure"))
        results.append(res)
        if ok:
            remaining.pop(target.id, None)
        t2 = t2 + duration
        p2 = p2 + speed * duration * BELT_AXIS
    return results


def _attempts_until_exhausted(p2, speed, timing, belt_end):
    out = []
    n = 3
    while p2[0] + speed * (n - 2) * timing.interval <= belt_end and n < 10_000:
        out.append(n)
        n += 1
    return out
