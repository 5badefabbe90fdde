"""Parallel-jaw gripper model and grasp candidates.

Gripper frame: origin at the grasp centre between the fingertips, +x is the
closing axis, +z the approach direction (towards the object) and
y = z cross x.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import Aabb, Pose


class Stability(enum.Enum):
    STABLE = "Stable"
    UNSTABLE = "Unstable"
    POTENTIAL = "Potential"


@dataclass(frozen=True)
class GripperSpec:
    """Two-finger adaptive gripper; defaults approximate a 140 mm stroke model."""

    max_opening: float = 0.14
    finger_thickness: float = 0.008
    finger_width: float = 0.02
    finger_length: float = 0.05
    tip_extension: float = 0.01
    palm_size: tuple = (0.09, 0.05, 0.08)
    clearance: float = 0.01
    backoff_distance: float = 0.10

    def __post_init__(self):
        if self.max_opening <= 0:
            raise ValueError("max_opening must be positive")

    def opening_for(self, width: float) -> float:
        return min(self.max_opening, width + 2.0 * self.clearance)

    def _z_span(self):
        return self.tip_extension - self.finger_length, self.tip_extension

    def closure_box(self, width: float) -> Aabb:
        half = 0.5 * self.opening_for(width)
        z0, z1 = self._z_span()
        w = 0.5 * self.finger_width
        return Aabb([-half, -w, z0], [half, w, z1])

    def finger_boxes(self, width: float) -> tuple:
        half = 0.5 * self.opening_for(width)
        z0, z1 = self._z_span()
        w = 0.5 * self.finger_width
        t = self.finger_thickness
        return (Aabb([half, -w, z0], [half + t, w, z1]), Aabb([-half - t, -w, z0], [-half, w, z1]))

    def body_box(self, width: float) -> Aabb:
        """Envelope of palm and fingers at the pre-shape opening for ``width``."""
        half = 0.5 * self.opening_for(width) + self.finger_thickness
        z0, z1 = self._z_span()
        hx = max(0.5 * self.palm_size[0], half)
        hy = 0.5 * max(self.palm_size[1], self.finger_width)
        return Aabb([-hx, -hy, z0 - self.palm_size[2]], [hx, hy, z1])

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["palm_size"] = list(self.palm_size)
        return d


@dataclass(frozen=True, eq=False)
class GraspCandidate:
    pose: Pose
    width: float
    contacts: Optional[np.ndarray] = None  # (2, 3) contact points
    contact_normals: Optional[np.ndarray] = None  # (2, 3) surface normals at the contacts
    stability: Stability = Stability.POTENTIAL
    meta: dict = field(default_factory=dict)

    @property
    def center(self) -> np.ndarray:
        return self.pose.translation

    @property
    def closing_axis(self) -> np.ndarray:
        return self.pose.R[:, 0]

    @property
    def approach(self) -> np.ndarray:
        return self.pose.R[:, 2]

    def pregrasp_pose(self, backoff: float) -> Pose:
        return self.pose.translated(-backoff * self.approach)

    def transformed(self, T: Pose) -> "GraspCandidate":
        return replace(
            self,
            pose=T @ self.pose,
            contacts=None if self.contacts is None else T.apply(self.contacts),
            contact_normals=None if self.contact_normals is None else T.rotate(self.contact_normals),
            stability=Stability.POTENTIAL,
        )

    def translated(self, v) -> "GraspCandidate":
        v = np.asarray(v, dtype=float)
        return replace(
            self,
            pose=self.pose.translated(v),
            contacts=None if self.contacts is None else self.contacts + v,
        )

    def with_stability(self, s: Stability) -> "GraspCandidate":
        return replace(self, stability=s)

    def to_dict(self) -> dict:
        d = {"pose": self.pose.to_dict(), "width": self.width, "stability": self.stability.value}
        if self.contacts is not None:
            d["contacts"] = self.contacts.tolist()
        if self.contact_normals is not None:
            d["contact_normals"] = self.contact_normals.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "GraspCandidate":
        return cls(
            Pose.from_dict(d["pose"]),
            float(d["width"]),
            None if "contacts" not in d else np.array(d["contacts"]),
            None if "contact_normals" not in d else np.array(d["contact_normals"]),
            Stability(d.get("stability", "Potential")),
        )
