"""Virtual depth camera and global object detection."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import EmptySelection
from .geometry import Aabb, PointCloud, Pose, look_at
from .kernels import render_depth
from .shapes import KIND_CODES
from .sim_world import WorldState

# local camera rotation used for top-down views: world +x runs down the image rows
TOP_DOWN_R = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])


@dataclass(frozen=True)
class CameraSpec:
    fov_along: float = np.radians(58.0)
    fov_across: float = np.radians(87.0)
    height: int = 480
    width: int = 640
    frame_rate: float = 30.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        for name in ("fov_along", "fov_across"):
            v = getattr(self, name)
            if not 0.0 < v < np.pi:
                raise ValueError(f"{name} must lie in (0, pi)")
        if self.height < 2 or self.width < 2:
            raise ValueError("resolution must be at least 2x2")
        if self.frame_rate <= 0:
            raise ValueError("frame_rate must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def fy(self) -> float:
        return 0.5 * self.height / np.tan(0.5 * self.fov_along)

    @property
    def fx(self) -> float:
        return 0.5 * self.width / np.tan(0.5 * self.fov_across)

    @property
    def cx(self) -> float:
        return 0.5 * self.width

    @property
    def cy(self) -> float:
        return 0.5 * self.height

    @property
    def dt(self) -> float:
        return 1.0 / self.frame_rate

    def project(self, cam_points: np.ndarray) -> np.ndarray:
        """Camera-frame points -> continuous (row, col) image coordinates."""
        p = np.asarray(cam_points, dtype=float).reshape(-1, 3)
        return np.column_stack([p[:, 1] / p[:, 2] * self.fy + self.cy, p[:, 0] / p[:, 2] * self.fx + self.cx])

    def ray_scale(self) -> np.ndarray:
        """Per-pixel ratio of range along the ray to z-depth."""
        return _ray_scale(self)

    def to_dict(self) -> dict:
        return {
            "fovAlongDeg": float(np.degrees(self.fov_along)),
            "fovAcrossDeg": float(np.degrees(self.fov_across)),
            "height": self.height,
            "width": self.width,
            "frameRate": self.frame_rate,
            "noiseSigma": self.noise_sigma,
        }


@lru_cache(maxsize=8)
def _ray_scale(spec: CameraSpec) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(spec.height), np.arange(spec.width), indexing="ij")
    xn = (cc + 0.5 - spec.cx) / spec.fx
    yn = (rr + 0.5 - spec.cy) / spec.fy
    out = np.sqrt(1.0 + xn * xn + yn * yn)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp: float
    depth: np.ndarray
    labels: np.ndarray
    camera_pose: Pose
    spec: CameraSpec
    silhouette: dict = field(default_factory=dict)  # object id -> full projected pixel count
    categories: dict = field(default_factory=dict)  # object id -> category

    def __post_init__(self):
        if self.depth.shape != self.labels.shape:
            raise ValueError("depth and labels differ in shape")


@dataclass(frozen=True, eq=False)
class ObjectInstance:
    id: int
    category: str
    confidence: float
    cloud: PointCloud
    box2d: tuple  # (r0, c0, r1, c1), end-exclusive
    aabb: Aabb

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "category": self.category,
            "confidence": self.confidence,
            "box2d": list(self.box2d),
            "aabb": self.aabb.to_dict(),
            "points": len(self.cloud),
        }


def top_down_pose(x: float, y: float, z: float) -> Pose:
    return Pose.from_matrix(TOP_DOWN_R, [x, y, z])


def _part_arrays(world: WorldState):
    kinds, objs, Rs, ts, dims, corners = [], [], [], [], [], []
    for k, o in enumerate(world.objects):
        Rw = o.pose.R
        for part in o.shape.parts:
            kinds.append(KIND_CODES[part.kind])
            objs.append(k)
            Rs.append(Rw.T.ravel())
            c = o.pose.apply(np.array(part.center))
            ts.append(c)
            dims.append(part.kernel_dims())
            h = part.half_extents
            box = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
            corners.append(c + box @ Rw.T)
    return kinds, objs, Rs, ts, dims, corners


def _rects(corners, cam: Pose, spec: CameraSpec) -> np.ndarray:
    rects = np.zeros((len(corners), 4), dtype=np.int64)
    inv = cam.inverse()
    for i, cw in enumerate(corners):
        pc = inv.apply(cw)
        if np.any(pc[:, 2] <= 1e-6):
            rects[i] = (0, spec.height, 0, spec.width)
            continue
        rc = spec.project(pc)
        r0 = int(np.floor(rc[:, 0].min())) - 1
        r1 = int(np.ceil(rc[:, 0].max())) + 1
        c0 = int(np.floor(rc[:, 1].min())) - 1
        c1 = int(np.ceil(rc[:, 1].max())) + 1
        rects[i] = (max(r0, 0), min(r1, spec.height), max(c0, 0), min(c1, spec.width))
    return rects


def render(world: WorldState, camera_pose: Pose, spec: CameraSpec = CameraSpec(), rng=None, backend=None) -> Frame:
    """Ray-cast range image (distance along each pixel ray, m) and instance ids.

    Belt and floor give depth with label 0; empty pixels are 0.  Noise, if
    configured, is drawn from ``rng`` (default: seeded by the timestamp).
    """
    h, w = spec.height, spec.width
    kinds, objs, Rs, ts, dims, corners = _part_arrays(world)
    n = len(kinds)
    depth = np.zeros((h, w))
    lab = np.zeros((h, w), dtype=np.int32)
    sil = np.zeros(len(world.objects), dtype=np.int64)
    bb = world.belt_bounds
    belt = np.array([bb.lo[0], bb.hi[0], bb.lo[1], bb.hi[1], bb.hi[2]])
    render_depth(
        np.array(camera_pose.R, dtype=float), np.array(camera_pose.translation, dtype=float),
        spec.fx, spec.fy, spec.cx, spec.cy,
        _rects(corners, camera_pose, spec) if n else np.zeros((0, 4), dtype=np.int64),
        np.asarray(kinds, dtype=np.int32), np.asarray(objs, dtype=np.int32),
        np.ascontiguousarray(np.reshape(Rs, (n, 9)), dtype=float),
        np.ascontiguousarray(np.reshape(ts, (n, 3)), dtype=float),
        np.ascontiguousarray(np.reshape(dims, (n, 3)), dtype=float),
        belt, float(world.floor_z), depth, lab, sil,
        backend=backend,
    )
    depth *= spec.ray_scale()
    lut = np.array([0] + [o.id for o in world.objects], dtype=np.int32)
    labels = lut[lab]
    if spec.noise_sigma > 0:
        rng = rng if rng is not None else np.random.default_rng(int(round(world.clock * 1e6)))
        mask = depth > 0
        depth = depth + np.where(mask, rng.normal(0.0, spec.noise_sigma, depth.shape), 0.0)
        depth = np.maximum(depth, 0.0)
    return Frame(
        world.clock, depth, labels, camera_pose, spec,
        {o.id: int(s) for o, s in zip(world.objects, sil)},
        {o.id: o.category for o in world.objects},
    )


def backproject(frame: Frame, pixels) -> PointCloud:
    """World points for the given pixels: a boolean mask or a (rows, cols) pair."""
    if isinstance(pixels, np.ndarray) and pixels.dtype == bool:
        rows, cols = np.nonzero(pixels)
    else:
        rows, cols = (np.asarray(a, dtype=np.int64).ravel() for a in pixels)
    if len(rows) == 0:
        raise EmptySelection("no pixels selected")
    h, w = frame.depth.shape
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= h or cols.max() >= w:
        raise IndexError("pixel outside the frame")
    rng = frame.depth[rows, cols]
    if np.any(rng <= 0):
        raise EmptySelection("selected pixels carry no depth")
    s = frame.spec
    z = rng / s.ray_scale()[rows, cols]
    cam = np.column_stack([(cols + 0.5 - s.cx) / s.fx * z, (rows + 0.5 - s.cy) / s.fy * z, z])
    return PointCloud(frame.camera_pose.apply(cam))


def project_world(frame_or_pose, spec: CameraSpec, points) -> np.ndarray:
    pose = frame_or_pose.camera_pose if isinstance(frame_or_pose, Frame) else frame_or_pose
    return spec.project(pose.inverse().apply(np.asarray(points, dtype=float).reshape(-1, 3)))


def belt_region_px(camera_pose: Pose, spec: CameraSpec, belt: Aabb) -> tuple:
    """Pixel rectangle (r0, c0, r1, c1) covering the visible belt surface."""
    z = belt.hi[2]
    corners = np.array([[x, y, z] for x in (belt.lo[0], belt.hi[0]) for y in (belt.lo[1], belt.hi[1])])
    # sample the outline densely so edges that cross behind the camera are handled
    t = np.linspace(0.0, 1.0, 64)[:, None]
    loop = np.concatenate([corners[[0, 1, 3, 2, 0]][i] + t * (corners[[0, 1, 3, 2, 0]][i + 1] - corners[[0, 1, 3, 2, 0]][i]) for i in range(4)])
    pc = camera_pose.inverse().apply(loop)
    pc = pc[pc[:, 2] > 1e-6]
    if len(pc) == 0:
        return (0, 0, 0, 0)
    rc = spec.project(pc)
    r0 = int(np.clip(np.floor(rc[:, 0].min()), 0, spec.height))
    r1 = int(np.clip(np.ceil(rc[:, 0].max()), 0, spec.height))
    c0 = int(np.clip(np.floor(rc[:, 1].min()), 0, spec.width))
    c1 = int(np.clip(np.ceil(rc[:, 1].max()), 0, spec.width))
    return (r0, c0, r1, c1)


def _box_contains(a, b) -> bool:
    return a[0] <= b[0] and a[1] <= b[1] and a[2] >= b[2] and a[3] >= b[3]


def _box_intersects(a, b) -> bool:
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def segment_global(frame: Frame, belt_region: tuple, min_pixels: int = 20) -> list:
    """Instances on the belt with their world clouds and visibility confidence.

    Boxes outside ``belt_region`` are discarded, as is any box lying wholly
    inside another surviving box (a part reported separately from its whole).
    """
    labels = frame.labels
    ids = [int(i) for i in np.unique(labels) if i != 0]
    boxes = {}
    for i in ids:
        rows, cols = np.nonzero(labels == i)
        if len(rows) < min_pixels:
            continue
        boxes[i] = (int(rows.min()), int(cols.min()), int(rows.max()) + 1, int(cols.max()) + 1)
    boxes = {i: b for i, b in boxes.items() if _box_intersects(b, belt_region)}
    keep = []
    for i, b in boxes.items():
        inside = any(
            j != i and _box_contains(o, b) and (o != b or j < i) for j, o in boxes.items()
        )
        if not inside:
            keep.append(i)
    out = []
    for i in sorted(keep):
        mask = labels == i
        cloud = backproject(frame, mask)
        total = max(frame.silhouette.get(i, 0), int(mask.sum()))
        conf = float(mask.sum()) / total if total else 1.0
        out.append(ObjectInstance(i, frame.categories.get(i, "object"), conf, cloud, boxes[i], Aabb.from_points(cloud.points)))
    return out


def default_global_camera() -> Pose:
    """Fixed front-above view of the belt start zone."""
    return look_at([0.70, -0.30, 0.55], [0.16, 0.0, 0.05])


# ------------------------------------------------------------------ PGM export

def write_pgm(path, image: np.ndarray) -> None:
    """16-bit binary PGM (P5, big-endian samples)."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ValueError("PGM images are 2-D")
    data = np.clip(img, 0, 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    data = np.frombuffer(parts[4][: w * h * np.dtype(dtype).itemsize], dtype=dtype)
    return data.reshape(h, w).astype(np.int64)


def export_frame(frame: Frame, prefix) -> tuple:
    """Write ``<prefix>_depth.pgm`` (millimetres) and ``<prefix>_labels.pgm``."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    dpath = prefix.with_name(prefix.name + "_depth.pgm")
    lpath = prefix.with_name(prefix.name + "_labels.pgm")
    write_pgm(dpath, np.round(frame.depth * 1000.0))
    write_pgm(lpath, frame.labels)
    return dpath, lpath
