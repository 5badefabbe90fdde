"""Rigid transforms, point clouds, axis-aligned boxes and swept belt regions.

World convention: the belt runs along +x, y is across the belt and z is up
with the belt surface at z = 0.  Quaternions are stored as (w, x, y, z).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import EmptyCloud

BELT_AXIS = np.array([1.0, 0.0, 0.0])


def _quat_to_matrix(q):
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _matrix_to_quat(R):
    # Shepperd's method; picks the largest diagonal term for stability
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def _quat_mul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.rotation, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if n == 0:
            raise ValueError("zero quaternion")
        q = q / n
        t = np.asarray(self.translation, dtype=float).reshape(3)
        q.flags.writeable = False
        t = t.copy()
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        R = _quat_to_matrix(q)
        R.flags.writeable = False
        object.__setattr__(self, "_R", R)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, R, t=(0.0, 0.0, 0.0)) -> "Pose":
        R = np.asarray(R, dtype=float)
        if R.shape == (4, 4):
            R, t = R[:3, :3], R[:3, 3]
        return cls(_matrix_to_quat(R), t)

    @classmethod
    def from_axis_angle(cls, axis, angle, t=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=float)
        axis = axis / np.linalg.norm(axis)
        half = 0.5 * angle
        return cls(np.concatenate([[np.cos(half)], np.sin(half) * axis]), t)

    @classmethod
    def from_translation(cls, t) -> "Pose":
        return cls(translation=t)

    @property
    def R(self) -> np.ndarray:
        return self._R

    @property
    def t(self) -> np.ndarray:
        return self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self._R
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "Pose") -> "Pose":
        """``(a @ b).apply(p) == a.apply(b.apply(p))``."""
        return Pose(
            _quat_mul(self.rotation, other.rotation),
            self._R @ other.translation + self.translation,
        )

    def inverse(self) -> "Pose":
        w, x, y, z = self.rotation
        return Pose(np.array([w, -x, -y, -z]), -(self._R.T @ self.translation))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self._R.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self._R.T

    def translated(self, v) -> "Pose":
        # reuse the rotation as is: renormalising would perturb the last bits
        out = object.__new__(Pose)
        t = (self.translation + np.asarray(v, dtype=float)).reshape(3)
        t.flags.writeable = False
        object.__setattr__(out, "rotation", self.rotation)
        object.__setattr__(out, "translation", t)
        object.__setattr__(out, "_R", self._R)
        return out

    def rotation_angle_to(self, other: "Pose") -> float:
        """Geodesic angle (rad) between the two rotations."""
        d = abs(float(np.dot(self.rotation, other.rotation)))
        return 2.0 * np.arccos(min(1.0, d))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Pose":
        return cls(d["rotation"], d["translation"])

    def __repr__(self):
        q = np.round(self.rotation, 6).tolist()
        t = np.round(self.translation, 6).tolist()
        return f"Pose(q={q}, t={t})"


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera pose (optical axis +z, image rows +y) looking from ``eye`` at ``target``."""
    eye = np.asarray(eye, dtype=float)
    z = np.asarray(target, dtype=float) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, [0.0, 1.0, 0.0])
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose.from_matrix(np.column_stack([x, y, z]), eye)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "points", pts)
        if self.normals is not None:
            nrm = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if len(nrm) != len(pts):
                raise ValueError("normals and points differ in length")
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return len(self.points)

    def subset(self, idx) -> "PointCloud":
        return PointCloud(self.points[idx], None if self.normals is None else self.normals[idx])

    def centroid(self) -> np.ndarray:
        if len(self.points) == 0:
            raise EmptyCloud("centroid of an empty cloud")
        return self.points.mean(axis=0)

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return PointCloud(np.zeros((0, 3)))
        pts = np.concatenate([c.points for c in clouds])
        if all(c.normals is not None for c in clouds):
            return PointCloud(pts, np.concatenate([c.normals for c in clouds]))
        return PointCloud(pts)


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    normals = None if cloud.normals is None else pose.rotate(cloud.normals)
    return PointCloud(pose.apply(cloud.points), normals)


def voxel_downsample(points: np.ndarray, voxel: float) -> np.ndarray:
    """Indices of one representative point per occupied voxel (first in input order)."""
    if len(points) == 0:
        return np.zeros(0, dtype=np.int64)
    keys = np.floor(points / voxel).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return np.sort(first)


@dataclass(frozen=True, eq=False)
class Aabb:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(3)
        hi = np.asarray(self.hi, dtype=float).reshape(3)
        if np.any(lo > hi):
            raise ValueError(f"invalid box: min {lo} > max {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_points(cls, points) -> "Aabb":
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyCloud("bounding box of an empty point set")
        return cls(pts.min(axis=0), pts.max(axis=0))

    @classmethod
    def from_center(cls, center, size) -> "Aabb":
        c = np.asarray(center, dtype=float)
        h = 0.5 * np.asarray(size, dtype=float)
        return cls(c - h, c + h)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    def volume(self) -> float:
        return float(np.prod(self.size))

    def intersects(self, other: "Aabb") -> bool:
        """Closed-interval overlap: touching boxes intersect."""
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def intersection(self, other: "Aabb") -> Optional["Aabb"]:
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(lo > hi):
            return None
        return Aabb(lo, hi)

    def union(self, other: "Aabb") -> "Aabb":
        return Aabb(np.minimum(self.lo, other.lo), np.maximum(self.hi, other.hi))

    def translated(self, v) -> "Aabb":
        v = np.asarray(v, dtype=float)
        return Aabb(self.lo + v, self.hi + v)

    def extruded(self, axis, backward: float, forward: float) -> "Aabb":
        """Stretch the box by ``backward`` along ``-axis`` and ``forward`` along ``+axis``."""
        idx, sign = _axis_index(axis)
        lo, hi = self.lo.copy(), self.hi.copy()
        if sign > 0:
            lo[idx] -= backward
            hi[idx] += forward
        else:
            lo[idx] -= forward
            hi[idx] += backward
        return Aabb(lo, hi)

    def contains_points(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def grid(self, n=(4, 4, 8)) -> np.ndarray:
        """Regular lattice of sample points spanning the box, corners included."""
        axes = [np.linspace(self.lo[i], self.hi[i], n[i]) for i in range(3)]
        g = np.meshgrid(*axes, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    def corners(self) -> np.ndarray:
        return np.array(
            [[x, y, z] for x in (self.lo[0], self.hi[0]) for y in (self.lo[1], self.hi[1]) for z in (self.lo[2], self.hi[2])]
        )

    def to_dict(self) -> dict:
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Aabb":
        return cls(d["min"], d["max"])

    def __repr__(self):
        return f"Aabb(min={np.round(self.lo, 5).tolist()}, max={np.round(self.hi, 5).tolist()})"


def aabb_of(cloud: PointCloud) -> Aabb:
    if len(cloud) == 0:
        raise EmptyCloud("bounding box of an empty cloud")
    return Aabb.from_points(cloud.points)


def transform_box(box: Aabb, pose: Pose) -> Aabb:
    """World-axis box enclosing ``box`` (given in a local frame) after ``pose``."""
    return Aabb.from_points(pose.apply(box.corners()))


def _axis_index(axis):
    a = np.asarray(axis, dtype=float).reshape(3)
    idx = int(np.argmax(np.abs(a)))
    if abs(abs(a[idx]) - 1.0) > 1e-9 or np.count_nonzero(np.abs(a) > 1e-12) != 1:
        raise ValueError(f"belt axis must be a world-aligned unit vector, got {a}")
    return idx, (1 if a[idx] > 0 else -1)


class Region(enum.Enum):
    COLLISION = "collision"
    OVERLAP = "overlap"


@dataclass(frozen=True, eq=False)
class SweptRegions:
    """Collision area (target strip union neighbour strips) and overlap area (their intersections)."""

    target_strip: Aabb
    neighbour_strips: tuple
    overlap: tuple
    belt_axis: np.ndarray = field(default_factory=lambda: BELT_AXIS.copy())

    @property
    def collision(self) -> tuple:
        return (self.target_strip,) + tuple(self.neighbour_strips)

    def boxes(self, which: Region) -> tuple:
        return self.collision if Region(which) is Region.COLLISION else tuple(self.overlap)

    def contains_points(self, points, which: Region = Region.COLLISION) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        mask = np.zeros(len(p), dtype=bool)
        for box in self.boxes(which):
            mask |= box.contains_points(p)
        return mask

    def translated(self, v) -> "SweptRegions":
        return SweptRegions(
            self.target_strip.translated(v),
            tuple(b.translated(v) for b in self.neighbour_strips),
            tuple(b.translated(v) for b in self.overlap),
            self.belt_axis,
        )


def build_swept_regions(target: Aabb, surrounding: Iterable[Aabb], belt_axis=BELT_AXIS, extent: float = 1.0) -> SweptRegions:
    if extent <= 0:
        raise ValueError("extrusion extent must be positive")
    _axis_index(belt_axis)
    blue = target.extruded(belt_axis, backward=extent, forward=0.0)
    reds = tuple(s.extruded(belt_axis, backward=extent, forward=extent) for s in surrounding)
    overlap = tuple(box for box in (blue.intersection(r) for r in reds) if box is not None)
    return SweptRegions(blue, reds, overlap, np.asarray(belt_axis, dtype=float))


def region_contains_box(regions: SweptRegions, query: Aabb, which: Region = Region.COLLISION) -> bool:
    return any(box.intersects(query) for box in regions.boxes(which))
