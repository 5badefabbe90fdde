"""Local top-down observation: camera placement, frame differencing, key times and speed estimate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import CenterlineNotReached, ClutterNeverArrives, EmptyClutter, InvalidTimes
from .geometry import BELT_AXIS, PointCloud, Pose
from .perception import CameraSpec, Frame, top_down_pose

HEIGHT_ABOVE_CLUTTER = 0.30
DEPTH_THRESHOLD = 0.005
MIN_BLOB = 4
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True, eq=False)
class LocalObservationPose:
    camera_pose: Pose
    height_above_clutter: float
    front_point: np.ndarray

    @property
    def position(self) -> np.ndarray:
        return self.camera_pose.translation


@dataclass(frozen=True)
class TrackReport:
    t1: float
    t2: float
    d1: float
    d2: float
    dh1: int
    dh2: int
    speed: float = float("nan")
    p2: tuple = (float("nan"),) * 3

    def to_dict(self) -> dict:
        return {
            "t1": self.t1, "t2": self.t2, "d1": self.d1, "d2": self.d2,
            "dh1": self.dh1, "dh2": self.dh2, "speed": self.speed, "p2": list(self.p2),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _points(clouds) -> np.ndarray:
    pts = [c.points if isinstance(c, PointCloud) else np.asarray(c, dtype=float).reshape(-1, 3) for c in clouds]
    pts = [p for p in pts if len(p)]
    if not pts:
        raise EmptyClutter("no clutter points to observe")
    return np.concatenate(pts)


def place_local_camera(clouds: Sequence, belt_axis=BELT_AXIS, spec: CameraSpec = CameraSpec(),
                       height_above: float = HEIGHT_ABOVE_CLUTTER) -> LocalObservationPose:
    """Top-down camera whose entry boundary passes through the clutter point that enters first.

    A point at height z enters the view when it is (cam_z - z)·tan(α/2)
    behind the camera, so the first point to enter maximises
    x + (cam_z - z)·tan(α/2).
    """
    if not np.allclose(belt_axis, BELT_AXIS):
        raise ValueError("the local camera assumes a belt along +x")
    pts = _points(clouds)
    cam_z = float(pts[:, 2].max()) + height_above
    half = np.tan(0.5 * spec.fov_along)
    reach = pts[:, 0] + (cam_z - pts[:, 2]) * half
    i = int(np.argmax(reach))
    front = pts[i]
    cam_x = float(reach[i])
    cam_y = float(pts[:, 1].mean())
    return LocalObservationPose(top_down_pose(cam_x, cam_y, cam_z), height_above, front.copy())


def frame_diff_track(prev: Frame, cur: Frame, threshold: float = DEPTH_THRESHOLD,
                     min_blob: int = MIN_BLOB) -> Optional[tuple]:
    """Bounding rectangle (r0, c0, r1, c1) of significant depth change, or None."""
    mask = _motion_mask(prev, cur, threshold, min_blob)
    if mask is None:
        return None
    rows, cols = np.nonzero(mask)
    return (int(rows.min()), int(cols.min()), int(rows.max()) + 1, int(cols.max()) + 1)


def _motion_mask(prev: Frame, cur: Frame, threshold: float, min_blob: int):
    if prev.depth.shape != cur.depth.shape:
        raise ValueError("frames differ in size")
    mask = np.abs(cur.depth - prev.depth) > threshold
    if not mask.any():
        return None
    lab, n = ndimage.label(mask, structure=_EIGHT)
    sizes = np.bincount(lab.ravel())
    good = sizes >= min_blob
    good[0] = False
    mask = good[lab]
    return mask if mask.any() else None


def _leading(prev: Frame, cur: Frame, threshold: float, min_blob: int):
    """Leading-edge row of the motion mask and the depth of the surface that arrived there."""
    mask = _motion_mask(prev, cur, threshold, min_blob)
    if mask is None:
        return None
    rows = np.flatnonzero(mask.any(axis=1))
    r = int(rows.max())
    sel = mask[r] & (cur.depth[r] > 0)
    if not sel.any():
        return None
    return r, float(np.median(cur.depth[r][sel]))


def detect_key_times(frames: Iterable[Frame], spec: CameraSpec, threshold: float = DEPTH_THRESHOLD,
                     min_blob: int = MIN_BLOB) -> TrackReport:
    """t1: first frame with motion; t2: first frame whose leading edge reaches the centerline row.

    Motion is measured against the first frame of the stream, which shows the
    empty belt: a slanted face can change by less than the threshold between
    consecutive frames at low speed and would otherwise enter unseen.
    """
    center = spec.height // 2
    ref = None
    first = None
    for f in frames:
        if ref is None:
            ref = f
            continue
        lead = _leading(ref, f, threshold, min_blob)
        if lead is not None:
            r, d = lead
            if first is None:
                first = (f.timestamp, d, r)
            if r >= center:
                return TrackReport(first[0], f.timestamp, first[1], d, first[2], r - center)
    if first is None:
        raise ClutterNeverArrives("the clutter never entered the view")
    raise CenterlineNotReached("the stream ended before the clutter reached the centerline")


def track_source(frame_at: Callable[[int], Frame], spec: CameraSpec, max_frames: int,
                 threshold: float = DEPTH_THRESHOLD, min_blob: int = MIN_BLOB) -> TrackReport:
    """Same result as ``detect_key_times`` over frames 0..max_frames-1 of a noiseless source.

    The leading edge only moves forward, so the centerline crossing is
    found by galloping plus bisection instead of rendering every frame.
    """
    center = spec.height // 2
    cache = {}

    def frame(k):
        if k not in cache:
            cache[k] = frame_at(k)
        return cache[k]

    def lead(k):
        return _leading(frame(0), frame(k), threshold, min_blob)

    k1 = None
    for k in range(1, max_frames):
        if lead(k) is not None:
            k1 = k
            break
        if k > 1:
            cache.pop(k - 1, None)
    if k1 is None:
        raise ClutterNeverArrives("the clutter never entered the view")
    r1, d1 = lead(k1)

    def reached(k):
        lk = lead(k)
        return lk is not None and lk[0] >= center

    if reached(k1):
        k2 = k1
    else:
        lo, step = k1, 1
        hi = None
        while lo + step < max_frames:
            if reached(lo + step):
                hi = lo + step
                break
            lo += step
            step *= 2
        if hi is None:
            if max_frames - 1 > lo and reached(max_frames - 1):
                hi = max_frames - 1
            else:
                raise CenterlineNotReached("the stream ended before the clutter reached the centerline")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if reached(mid):
                hi = mid
            else:
                lo = mid
        k2 = hi
    r2, d2 = lead(k2)
    return TrackReport(frame(k1).timestamp, frame(k2).timestamp, d1, d2, r1, r2 - center)


def estimate_speed(report: TrackReport, spec: CameraSpec) -> float:
    """ṽ = ((d1+d2)/2 · tan((0.5 + (Δh2-Δh1)/h)·α)) / (t2 - t1)."""
    if not report.t2 > report.t1:
        raise InvalidTimes("t2 must be later than t1")
    d = 0.5 * (report.d1 + report.d2)
    return d * np.tan((0.5 + (report.dh2 - report.dh1) / spec.height) * spec.fov_along) / (report.t2 - report.t1)


def instantaneous_position(report: TrackReport, pose: LocalObservationPose, spec: CameraSpec) -> np.ndarray:
    """Clutter front at t2: below the camera at depth d2, pushed ahead by the Δh2 overshoot."""
    if not np.isfinite(report.t2) or not report.d2 > 0:
        raise InvalidTimes("t2 has not been detected")
    c = pose.position
    ahead = report.d2 * np.tan(report.dh2 * spec.fov_along / spec.height)
    return np.array([c[0] + ahead, c[1], c[2] - report.d2])


def complete_report(partial: TrackReport, pose: LocalObservationPose, spec: CameraSpec) -> TrackReport:
    v = estimate_speed(partial, spec)
    p2 = instantaneous_position(partial, pose, spec)
    return TrackReport(partial.t1, partial.t2, partial.d1, partial.d2, partial.dh1, partial.dh2,
                       float(v), tuple(float(x) for x in p2))
