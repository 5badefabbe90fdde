"""Procedural primitive shapes: boxes, upright cylinders, spheres and unions of them.

Every shape lives in an object frame whose base rests on z = 0 with the
footprint centred on the z axis.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from shapely.geometry import Point, box as shapely_box
from shapely.ops import unary_union

from .geometry import Aabb, PointCloud

KIND_CODES = {"box": 0, "cylinder": 1, "sphere": 2}


@dataclass(frozen=True)
class Part:
    kind: str
    center: tuple
    dims: tuple  # box: (sx, sy, sz); cylinder: (radius, height); sphere: (radius,)

    def __post_init__(self):
        if self.kind not in KIND_CODES:
            raise ValueError(f"unknown primitive {self.kind!r}")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        object.__setattr__(self, "dims", tuple(float(v) for v in self.dims))

    @property
    def half_extents(self) -> np.ndarray:
        if self.kind == "box":
            return 0.5 * np.array(self.dims)
        if self.kind == "cylinder":
            r, h = self.dims
            return np.array([r, r, 0.5 * h])
        r = self.dims[0]
        return np.array([r, r, r])

    def kernel_dims(self) -> np.ndarray:
        """Parameters in the layout the render kernel expects."""
        if self.kind == "box":
            return 0.5 * np.array(self.dims)
        if self.kind == "cylinder":
            return np.array([self.dims[0], 0.5 * self.dims[1], 0.0])
        return np.array([self.dims[0], 0.0, 0.0])

    def area(self) -> float:
        if self.kind == "box":
            a, b, c = self.dims
            return 2 * (a * b + b * c + a * c)
        if self.kind == "cylinder":
            r, h = self.dims
            return 2 * np.pi * r * h + 2 * np.pi * r * r
        return 4 * np.pi * self.dims[0] ** 2

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3) - np.array(self.center)
        if self.kind == "box":
            return np.all(np.abs(p) <= 0.5 * np.array(self.dims) + tol, axis=1)
        if self.kind == "cylinder":
            r, h = self.dims
            return (p[:, 0] ** 2 + p[:, 1] ** 2 <= (r + tol) ** 2) & (np.abs(p[:, 2]) <= 0.5 * h + tol)
        return np.einsum("ij,ij->i", p, p) <= (self.dims[0] + tol) ** 2

    def sample_surface(self, n: int, rng: np.random.Generator):
        c = np.array(self.center)
        if self.kind == "box":
            half = 0.5 * np.array(self.dims)
            areas = np.array([half[1] * half[2], half[0] * half[2], half[0] * half[1]]).repeat(2)
            face = rng.choice(6, size=n, p=areas / areas.sum())
            axis = face // 2
            sign = np.where(face % 2 == 0, 1.0, -1.0)
            u = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
            u[np.arange(n), axis] = sign * half[axis]
            normals = np.zeros((n, 3))
            normals[np.arange(n), axis] = sign
            return u + c, normals
        if self.kind == "cylinder":
            r, h = self.dims
            side, cap = 2 * np.pi * r * h, np.pi * r * r
            which = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
            theta = rng.uniform(0.0, 2 * np.pi, size=n)
            rad = np.where(which == 0, r, r * np.sqrt(rng.uniform(0.0, 1.0, size=n)))
            z = np.where(which == 0, rng.uniform(-0.5 * h, 0.5 * h, size=n), np.where(which == 1, 0.5 * h, -0.5 * h))
            pts = np.column_stack([rad * np.cos(theta), rad * np.sin(theta), z])
            normals = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
            normals[which == 1] = [0.0, 0.0, 1.0]
            normals[which == 2] = [0.0, 0.0, -1.0]
            return pts + c, normals
        v = rng.normal(size=(n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return v * self.dims[0] + c, v

    def footprint(self):
        cx, cy = self.center[:2]
        if self.kind == "box":
            sx, sy = self.dims[0], self.dims[1]
            return shapely_box(cx - sx / 2, cy - sy / 2, cx + sx / 2, cy + sy / 2)
        return Point(cx, cy).buffer(self.dims[0], quad_segs=32)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(self.center), "dims": list(self.dims)}


@dataclass(frozen=True)
class Shape:
    family: str
    parts: tuple

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if not self.parts:
            raise ValueError("shape needs at least one part")

    def bounds(self) -> Aabb:
        lo = np.min([np.array(p.center) - p.half_extents for p in self.parts], axis=0)
        hi = np.max([np.array(p.center) + p.half_extents for p in self.parts], axis=0)
        return Aabb(lo, hi)

    @property
    def height(self) -> float:
        return float(self.bounds().hi[2])

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        mask = np.zeros(len(p), dtype=bool)
        for part in self.parts:
            mask |= part.contains(p, tol)
        return mask

    def sample_surface(self, n: int, seed: int) -> PointCloud:
        """Area-weighted surface samples with outward normals; faces shared between parts are dropped."""
        rng = np.random.default_rng(seed)
        areas = np.array([p.area() for p in self.parts])
        pts_all, nrm_all = [], []
        # oversample so the union still has n points after removing internal faces
        want = n
        while True:
            counts = np.maximum(1, np.round(2 * want * areas / areas.sum()).astype(int))
            pts_all, nrm_all = [], []
            for i, (part, k) in enumerate(zip(self.parts, counts)):
                pts, nrm = part.sample_surface(int(k), rng)
                keep = np.ones(len(pts), dtype=bool)
                for j, other in enumerate(self.parts):
                    if j != i:
                        keep &= ~other.contains(pts, tol=1e-9)
                pts_all.append(pts[keep])
                nrm_all.append(nrm[keep])
            pts = np.concatenate(pts_all)
            if len(pts) >= n:
                break
            want *= 2
        nrm = np.concatenate(nrm_all)
        pick = np.sort(rng.choice(len(pts), size=n, replace=False))
        return PointCloud(pts[pick], nrm[pick])

    def footprint(self):
        return unary_union([p.footprint() for p in self.parts])

    def to_dict(self) -> dict:
        return {"family": self.family, "parts": [p.to_dict() for p in self.parts]}

    @classmethod
    def from_dict(cls, d) -> "Shape":
        return cls(d["family"], tuple(Part(p["kind"], p["center"], p["dims"]) for p in d["parts"]))


def box(sx, sy, sz) -> Shape:
    return Shape("box", (Part("box", (0, 0, sz / 2), (sx, sy, sz)),))


def cylinder(radius, height) -> Shape:
    return Shape("cylinder", (Part("cylinder", (0, 0, height / 2), (radius, height)),))


def sphere(radius) -> Shape:
    return Shape("sphere", (Part("sphere", (0, 0, radius), (radius,)),))


def bottle(radius, body_height, neck_radius, neck_height) -> Shape:
    return Shape(
        "bottle",
        (
            Part("cylinder", (0, 0, body_height / 2), (radius, body_height)),
            Part("cylinder", (0, 0, body_height + neck_height / 2), (neck_radius, neck_height)),
        ),
    )


def l_block(length, width, base_height, post_length, post_height) -> Shape:
    """An L profile: a flat base with an upright post flush with its +x end."""
    return Shape(
        "lblock",
        (
            Part("box", (0, 0, base_height / 2), (length, width, base_height)),
            Part(
                "box",
                (length / 2 - post_length / 2, 0, base_height + post_height / 2),
                (post_length, width, post_height),
            ),
        ),
    )


@lru_cache(maxsize=64)
def cached_surface(shape: Shape, n: int = 3000, seed: int = 0) -> PointCloud:
    return shape.sample_surface(n, seed)
