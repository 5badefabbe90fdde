"""Deterministic conveyor world: placement, belt motion, virtual clock and grasp adjudication."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from shapely import affinity

from .geometry import BELT_AXIS, Aabb, PointCloud, Pose
from .gripper import GraspCandidate, GripperSpec
from .modeldb import Catalog, default_catalog
from .shapes import Shape, cached_surface

BELT_BOUNDS = Aabb([0.0, -0.25, 0.0], [2.0, 0.25, 0.0])
FLOOR_Z = -0.75
ROBOT_BASE = (1.0, -0.45, 0.0)
HOME_TOOL = (1.0, -0.25, 0.45)
START_ZONE = 0.3
SPEED_MODES = {"low": 0.055, "high": 0.110}
WIDTH_TOL = 0.01


@dataclass(frozen=True, eq=False)
class WorldObject:
    id: int
    model_id: str
    category: str
    shape: Shape
    pose: Pose

    def surface(self) -> PointCloud:
        local = cached_surface(self.shape)
        return PointCloud(self.pose.apply(local.points), self.pose.rotate(local.normals))

    def aabb(self) -> Aabb:
        return Aabb.from_points(self.pose.apply(self.shape.bounds().corners()))

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        return self.shape.contains(self.pose.inverse().apply(np.asarray(points, dtype=float).reshape(-1, 3)), tol)

    def footprint(self):
        """Ground footprint polygon in world xy (upright objects only)."""
        yaw = np.degrees(np.arctan2(self.pose.R[1, 0], self.pose.R[0, 0]))
        poly = affinity.rotate(self.shape.footprint(), yaw, origin=(0.0, 0.0))
        return affinity.translate(poly, *self.pose.translation[:2])

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "modelId": self.model_id,
            "category": self.category,
            "shape": self.shape.to_dict(),
            "pose": self.pose.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "WorldObject":
        return cls(int(d["id"]), d["modelId"], d["category"], Shape.from_dict(d["shape"]), Pose.from_dict(d["pose"]))


@dataclass(frozen=True, eq=False)
class WorldState:
    belt_speed: float
    objects: tuple = ()
    clock: float = 0.0
    belt_bounds: Aabb = BELT_BOUNDS
    robot_base: tuple = ROBOT_BASE
    tool_position: tuple = HOME_TOOL
    floor_z: float = FLOOR_Z
    belt_axis: tuple = tuple(BELT_AXIS)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "robot_base", tuple(float(v) for v in self.robot_base))
        object.__setattr__(self, "tool_position", tuple(float(v) for v in self.tool_position))
        object.__setattr__(self, "belt_axis", tuple(float(v) for v in self.belt_axis))

    def object(self, oid: int) -> WorldObject:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(f"no object with id {oid}")

    def without(self, oid: int) -> "WorldState":
        return replace(self, objects=tuple(o for o in self.objects if o.id != oid))

    def translated(self, v) -> "WorldState":
        v = np.asarray(v, dtype=float)
        return replace(self, objects=tuple(replace(o, pose=o.pose.translated(v)) for o in self.objects))

    def to_dict(self) -> dict:
        return {
            "beltSpeed": self.belt_speed,
            "clock": self.clock,
            "beltBounds": self.belt_bounds.to_dict(),
            "beltAxis": list(self.belt_axis),
            "robotBase": list(self.robot_base),
            "toolPosition": list(self.tool_position),
            "floorZ": self.floor_z,
            "objects": [o.to_dict() for o in self.objects],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> "WorldState":
        return cls(
            float(d["beltSpeed"]),
            tuple(WorldObject.from_dict(o) for o in d["objects"]),
            float(d["clock"]),
            Aabb.from_dict(d["beltBounds"]),
            tuple(d["robotBase"]),
            tuple(d["toolPosition"]),
            float(d.get("floorZ", FLOOR_Z)),
            tuple(d.get("beltAxis", BELT_AXIS)),
        )


def step(world: WorldState, dt: float) -> WorldState:
    """Advance the clock by ``dt`` and move every object with the belt."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    shift = world.belt_speed * dt * np.asarray(world.belt_axis)
    moved = world.translated(shift)
    return replace(moved, clock=world.clock + dt)


def advance_to(world: WorldState, t: float) -> WorldState:
    if t < world.clock - 1e-12:
        raise ValueError("cannot move the clock backwards")
    return step(world, t - world.clock) if t > world.clock else world


# ------------------------------------------------------------------ grasp adjudication

class GraspOutcome(enum.Enum):
    SUCCESS = "Success"
    MISS = "Miss"
    COLLISION = "Collision"


def finger_collisions(world: WorldState, grasp: GraspCandidate, gripper: GripperSpec) -> list:
    """Ids of objects (0 for the belt) touched by the fingers at ``grasp``."""
    hits = []
    fingers = gripper.finger_boxes(grasp.width)
    samples = np.concatenate([grasp.pose.apply(b.grid()) for b in fingers])
    if np.any(samples[:, 2] < world.belt_bounds.lo[2] - 1e-9):
        hits.append(0)
    for o in world.objects:
        local = (o.surface().points - grasp.center) @ grasp.pose.R
        if any(np.any(b.contains_points(local)) for b in fingers) or np.any(o.contains(samples)):
            hits.append(o.id)
    return hits


def adjudicate(world: WorldState, grasp: GraspCandidate, target_id: int, gripper: GripperSpec) -> GraspOutcome:
    target = world.object(target_id)
    local = (target.surface().points - grasp.center) @ grasp.pose.R
    inside = grasp_closure_mask(local, grasp, gripper)
    if finger_collisions(world, grasp, gripper):
        return GraspOutcome.COLLISION
    if not inside.any():
        return GraspOutcome.MISS
    extent = float(local[inside, 0].max() - local[inside, 0].min())
    if abs(grasp.width - extent) > WIDTH_TOL:
        return GraspOutcome.MISS
    return GraspOutcome.SUCCESS


def grasp_closure_mask(local_points: np.ndarray, grasp: GraspCandidate, gripper: GripperSpec) -> np.ndarray:
    return gripper.closure_box(grasp.width).contains_points(local_points)


def execute_grasp(world: WorldState, grasp: GraspCandidate, execute_at: float, target_id: int,
                  gripper: GripperSpec = GripperSpec()):
    """Advance to ``execute_at`` and close the gripper; returns (outcome, world after)."""
    if execute_at < world.clock - 1e-12:
        raise ValueError("execute_at lies in the past")
    w = advance_to(world, execute_at)
    outcome = adjudicate(w, grasp, target_id, gripper)
    w = replace(w, tool_position=tuple(grasp.center))
    if outcome is GraspOutcome.SUCCESS:
        w = w.without(target_id)
    return outcome, w


# ------------------------------------------------------------------ scenarios

PATTERNS = {"P1": 3, "P2": 3, "P3": 5}
CLUTTER_SETS = ("C1", "C2", "C3", "C4", "C5")
ARRANGEMENTS = tuple(f"A{i}" for i in range(1, 11))

# model ids per (pattern, clutter set); P1 repeats one model three times
CLUTTER_TABLE = {
    "P1": {
        "C1": ("004_soup_can",) * 3,
        "C2": ("002_sugar_box",) * 3,
        "C3": ("007_tennis_ball",) * 3,
        "C4": ("009_paper_cup",) * 3,
        "C5": ("003_cube_block",) * 3,
    },
    "P2": {
        "C1": ("004_soup_can", "002_sugar_box", "007_tennis_ball"),
        "C2": ("005_cylinder_can", "001_cereal_box", "008_orange_ball"),
        "C3": ("006_mustard_bottle", "003_cube_block", "009_paper_cup"),
        "C4": ("010_l_bracket", "004_soup_can", "008_orange_ball"),
        "C5": ("001_cereal_box", "009_paper_cup", "007_tennis_ball"),
    },
    "P3": {
        "C1": ("004_soup_can", "002_sugar_box", "007_tennis_ball", "006_mustard_bottle", "003_cube_block"),
        "C2": ("005_cylinder_can", "001_cereal_box", "008_orange_ball", "009_paper_cup", "010_l_bracket"),
        "C3": ("006_mustard_bottle", "003_cube_block", "009_paper_cup", "007_tennis_ball", "002_sugar_box"),
        "C4": ("010_l_bracket", "004_soup_can", "008_orange_ball", "001_cereal_box", "009_paper_cup"),
        "C5": ("001_cereal_box", "005_cylinder_can", "007_tennis_ball", "003_cube_block", "006_mustard_bottle"),
    },
}


@dataclass(frozen=True)
class Scenario:
    pattern: str
    clutter_set: str = "C1"
    arrangement: str = "A1"
    belt_speed: float = SPEED_MODES["low"]
    seed: int = 0
    model_ids: tuple = field(default=None)

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.model_ids is None:
            if self.clutter_set not in CLUTTER_TABLE[self.pattern]:
                raise ValueError(f"unknown clutter set {self.clutter_set!r}")
            object.__setattr__(self, "model_ids", CLUTTER_TABLE[self.pattern][self.clutter_set])
        ids = tuple(self.model_ids)
        object.__setattr__(self, "model_ids", ids)
        n = PATTERNS[self.pattern]
        if len(ids) != n:
            raise ValueError(f"pattern {self.pattern} needs {n} objects")
        distinct = len(set(ids))
        if self.pattern == "P1" and distinct != 1:
            raise ValueError("P1 uses three identical objects")
        if self.pattern != "P1" and distinct != n:
            raise ValueError(f"{self.pattern} uses {n} different objects")

    @property
    def key(self) -> str:
        return f"{self.pattern}-{self.clutter_set}-{self.arrangement}"

    def placement_seed(self) -> int:
        h = hashlib.sha256(f"{self.key}/{self.seed}".encode()).digest()
        return int.from_bytes(h[:8], "little")

    def to_dict(self) -> dict:
        return {
            "pattern": self.pattern,
            "clutterSet": self.clutter_set,
            "arrangement": self.arrangement,
            "beltSpeed": self.belt_speed,
            "seed": self.seed,
            "modelIds": list(self.model_ids),
        }

    @classmethod
    def from_dict(cls, d) -> "Scenario":
        return cls(
            d["pattern"],
            d.get("clutterSet", "C1"),
            d.get("arrangement", "A1"),
            float(d.get("beltSpeed", SPEED_MODES["low"])),
            int(d.get("seed", 0)),
            tuple(d["modelIds"]) if d.get("modelIds") is not None else None,
        )


def _place(poly, x, y, yaw):
    return affinity.translate(affinity.rotate(poly, yaw, origin=(0.0, 0.0), use_radians=True), x, y)


def _gap_position(anchor, poly, direction, yaw, gap, start):
    """Smallest distance along ``direction`` from ``start`` giving ``gap`` between footprints."""
    lo, hi = 0.0, 0.5
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        cand = _place(poly, *(start + mid * direction), yaw)
        if cand.intersection(anchor).area > 1e-10 or cand.distance(anchor) < gap:
            lo = mid
        else:
            hi = mid
    return start + hi * direction


def generate_scenario(spec: Scenario, catalog: Catalog | None = None, max_gap: float = 0.02,
                      zone: float = START_ZONE) -> WorldState:
    """Seeded dense-clutter placement in the belt start zone.

    Each object after the first is laid next to an already placed one at a
    random gap in [0, max_gap]; overlap with any object is rejected.
    """
    catalog = catalog or default_catalog()
    rng = np.random.default_rng(spec.placement_seed())
    belt = BELT_BOUNDS
    margin = 0.02
    for _attempt in range(200):
        placed = []
        polys = []
        ok = True
        for k, mid in enumerate(spec.model_ids):
            desc = catalog.descriptor(mid)
            base = desc.shape.footprint()
            done = False
            for _try in range(100):
                yaw = float(rng.uniform(-np.pi, np.pi))
                if not placed:
                    xy = np.array([rng.uniform(0.08, zone - 0.08), rng.uniform(-0.08, 0.08)])
                else:
                    anchor = polys[int(rng.integers(len(polys)))]
                    ang = rng.uniform(0.0, 2 * np.pi)
                    direction = np.array([np.cos(ang), np.sin(ang)])
                    c = np.array(anchor.centroid.coords[0])
                    xy = _gap_position(anchor, base, direction, yaw, float(rng.uniform(0.0, max_gap)), c)
                poly = _place(base, xy[0], xy[1], yaw)
                minx, miny, maxx, maxy = poly.bounds
                if minx < belt.lo[0] or maxx > zone or miny < belt.lo[1] + margin or maxy > belt.hi[1] - margin:
                    continue
                if any(poly.intersection(q).area > 1e-9 for q in polys):
                    continue
                placed.append((mid, desc, xy, yaw))
                polys.append(poly)
                done = True
                break
            if not done:
                ok = False
                break
        if ok:
            break
    else:
        raise RuntimeError(f"could not place scenario {spec.key}")
    objects = tuple(
        WorldObject(i + 1, mid, desc.category, desc.shape, Pose.from_axis_angle([0, 0, 1], yaw, [xy[0], xy[1], 0.0]))
        for i, (mid, desc, xy, yaw) in enumerate(placed)
    )
    return WorldState(spec.belt_speed, objects)


def nearest_gaps(world: WorldState) -> list:
    polys = [o.footprint() for o in world.objects]
    return [min(p.distance(q) for j, q in enumerate(polys) if j != i) for i, p in enumerate(polys)]
