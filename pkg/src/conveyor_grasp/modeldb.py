"""Reference-model catalog, antipodal grasp pre-planning and candidate screening."""

from __future__ import annotations

import json
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import InsufficientGeometry, NoMatches, ScreenerUnavailable, UnknownCatalog
from .geometry import PointCloud, Pose
from .gripper import GraspCandidate, GripperSpec
from .shapes import Shape, bottle, box, cylinder, l_block, sphere

SURFACE_POINTS = 3000
GRASPS_PER_MODEL = 160
ANTIPODAL_TOL_DEG = 20.0


# ---------------------------------------------------------------- grasp sampling

def _perpendicular(v):
    a = np.array([0.0, 0.0, 1.0]) if abs(v[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = a - np.dot(a, v) * v
    return u / np.linalg.norm(u)


def preplan_grasps(
    surface: PointCloud,
    gripper: GripperSpec,
    target_count: int = GRASPS_PER_MODEL,
    seed: int = 0,
    *,
    angle_tol_deg: float = ANTIPODAL_TOL_DEG,
    line_tol: float = 0.003,
    min_width: float = 0.005,
    budget_factor: int = 25,
) -> list:
    """Sample antipodal two-finger grasps on an oriented surface cloud.

    For a seed point p the partner q is the first surface sample where the
    inward line through p leaves the body.  Accepted pairs get a random
    rotation about the closing axis and are kept when neither finger would
    sit inside the object.
    """
    if surface.normals is None:
        raise ValueError("preplan_grasps needs surface normals")
    if target_count < 1:
        raise ValueError("target_count must be positive")
    pts, nrm = surface.points, surface.normals
    rng = np.random.default_rng(seed)
    cos_tol = np.cos(np.radians(angle_tol_deg))
    budget = budget_factor * target_count
    grasps: list = []
    attempts = 0
    n = len(pts)
    while len(grasps) < target_count and attempts < budget:
        order = rng.permutation(n)
        for i in order:
            if len(grasps) >= target_count or attempts >= budget:
                break
            attempts += 1
            p, n_p = pts[i], nrm[i]
            d = -n_p
            v = pts - p
            t = v @ d
            perp2 = np.einsum("ij,ij->i", v, v) - t * t
            cand = (t > min_width) & (perp2 <= line_tol * line_tol) & (nrm @ d > 0.0)
            if not np.any(cand):
                continue
            idx = np.flatnonzero(cand)
            j = idx[np.argmin(t[idx])]
            width = float(t[j])
            n_q = nrm[j]
            if width > gripper.max_opening or float(np.dot(n_p, -n_q)) < cos_tol:
                continue
            q = p + width * d
            x = d
            u = _perpendicular(x)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            z = np.cos(phi) * u + np.sin(phi) * np.cross(x, u)
            y = np.cross(z, x)
            pose = Pose.from_matrix(np.column_stack([x, y, z]), 0.5 * (p + q))
            local = (pts - pose.translation) @ pose.R
            if any(np.any(b.contains_points(local)) for b in gripper.finger_boxes(width)):
                continue
            grasps.append(
                GraspCandidate(pose, width, np.array([p, q]), np.array([n_p, n_q]))
            )
    if len(grasps) < target_count:
        raise InsufficientGeometry(
            f"found {len(grasps)} antipodal grasps after {attempts} attempts, need {target_count}"
        )
    return grasps


# ---------------------------------------------------------------- models and catalog

@dataclass(frozen=True, eq=False)
class ReferenceModel:
    id: str
    category: str
    shape: Shape
    surface: PointCloud
    grasps: tuple
    seed: int = 0

    @property
    def index(self) -> str:
        return self.id.split("_", 1)[0]


@dataclass(frozen=True)
class ModelDescriptor:
    id: str
    category: str
    shape: Shape
    seed: int = 0

    def to_dict(self) -> dict:
        return {"id": self.id, "category": self.category, "shape": self.shape.to_dict(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "ModelDescriptor":
        return cls(d["id"], d["category"], Shape.from_dict(d["shape"]), int(d.get("seed", 0)))


@lru_cache(maxsize=128)
def build_model(desc: ModelDescriptor, gripper: GripperSpec = GripperSpec()) -> ReferenceModel:
    surface = desc.shape.sample_surface(SURFACE_POINTS, desc.seed)
    grasps = preplan_grasps(surface, gripper, GRASPS_PER_MODEL, desc.seed)
    return ReferenceModel(desc.id, desc.category, desc.shape, surface, tuple(grasps), desc.seed)


class Catalog:
    """Immutable set of model descriptors; models are built lazily and cached."""

    def __init__(self, name: str, descriptors: Sequence[ModelDescriptor], gripper: GripperSpec = GripperSpec()):
        if not descriptors:
            raise ValueError("catalog must not be empty")
        ids = [d.id for d in descriptors]
        if len(set(ids)) != len(ids):
            raise ValueError("catalog ids must be unique")
        self.name = name
        self.gripper = gripper
        self._desc = {d.id: d for d in descriptors}
        self.ids = tuple(ids)

    def __len__(self):
        return len(self.ids)

    def __contains__(self, model_id):
        return model_id in self._desc

    def descriptor(self, model_id: str) -> ModelDescriptor:
        try:
            return self._desc[model_id]
        except KeyError:
            raise KeyError(f"{model_id!r} not in catalog {self.name!r}") from None

    def model(self, model_id: str) -> ReferenceModel:
        return build_model(self.descriptor(model_id), self.gripper)

    def descriptors(self):
        return [self._desc[i] for i in self.ids]

    def by_index(self) -> dict:
        return {i.split("_", 1)[0]: i for i in self.ids}

    def save(self, directory) -> None:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        (path / "catalog.json").write_text(json.dumps({"name": self.name}, indent=2))
        for d in self.descriptors():
            (path / f"{d.id}.json").write_text(json.dumps(d.to_dict(), indent=2))

    @classmethod
    def load(cls, directory, gripper: GripperSpec = GripperSpec()) -> "Catalog":
        path = Path(directory)
        meta = path / "catalog.json"
        name = json.loads(meta.read_text())["name"] if meta.exists() else path.name
        descs = [
            ModelDescriptor.from_dict(json.loads(f.read_text()))
            for f in sorted(path.glob("*.json"))
            if f.name != "catalog.json"
        ]
        return cls(name, descs, gripper)


def _default_descriptors():
    return [
        ModelDescriptor("001_cereal_box", "box", box(0.05, 0.10, 0.12), 1),
        ModelDescriptor("002_sugar_box", "box", box(0.04, 0.08, 0.10), 2),
        ModelDescriptor("003_cube_block", "block", box(0.06, 0.06, 0.06), 3),
        ModelDescriptor("004_soup_can", "can", cylinder(0.033, 0.10), 4),
        ModelDescriptor("005_cylinder_can", "can", cylinder(0.04, 0.11), 5),
        ModelDescriptor("006_mustard_bottle", "bottle", bottle(0.03, 0.09, 0.012, 0.03), 6),
        ModelDescriptor("007_tennis_ball", "ball", sphere(0.033), 7),
        ModelDescriptor("008_orange_ball", "fruit", sphere(0.04), 8),
        ModelDescriptor("009_paper_cup", "cup", cylinder(0.035, 0.09), 9),
        ModelDescriptor("010_l_bracket", "bracket", l_block(0.10, 0.05, 0.03, 0.03, 0.08), 10),
    ]


@lru_cache(maxsize=1)
def default_catalog() -> Catalog:
    return Catalog("procedural objects", _default_descriptors())


# ---------------------------------------------------------------- screening

@dataclass(frozen=True)
class ScreenRequest:
    catalog_name: str
    category: str
    k: int = 5

    def to_dict(self) -> dict:
        return {"catalogName": self.catalog_name, "category": self.category, "k": self.k}


@dataclass(frozen=True)
class ScreenResponse:
    candidate_ids: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"candidateIds": list(self.candidate_ids)}


class CandidateScreener(Protocol):
    catalogs: Mapping[str, Catalog]

    def screen(self, request: ScreenRequest) -> ScreenResponse: ...


def _tokens(text: str) -> set:
    return {t for t in re.split(r"[^a-z0-9]+", text.lower()) if t and not t.isdigit()}


# category token -> affinity per shape family
SHAPE_AFFINITY = {
    "can": {"cylinder": 1.0, "bottle": 0.5},
    "tin": {"cylinder": 1.0, "bottle": 0.5},
    "cup": {"cylinder": 1.0, "bottle": 0.3},
    "mug": {"cylinder": 1.0, "bottle": 0.3},
    "jar": {"cylinder": 0.8, "bottle": 0.6},
    "bottle": {"bottle": 1.0, "cylinder": 0.6},
    "box": {"box": 1.0, "lblock": 0.3},
    "carton": {"box": 1.0},
    "block": {"box": 1.0, "lblock": 0.6},
    "cube": {"box": 1.0, "lblock": 0.3},
    "bracket": {"lblock": 1.0, "box": 0.4},
    "ball": {"sphere": 1.0},
    "fruit": {"sphere": 1.0},
    "orange": {"sphere": 1.0},
    "apple": {"sphere": 1.0},
}


def stub_affinity(category: str, desc: ModelDescriptor) -> float:
    cat = _tokens(category)
    overlap = len(cat & (_tokens(desc.id) | _tokens(desc.category)))
    shape = max((SHAPE_AFFINITY.get(t, {}).get(desc.shape.family, 0.0) for t in cat), default=0.0)
    return 2.0 * overlap + shape


class StubScreener:
    """Deterministic screener ranking by token overlap plus shape affinity."""

    def __init__(self, catalogs):
        if isinstance(catalogs, Catalog):
            catalogs = [catalogs]
        self.catalogs = {c.name: c for c in catalogs} if not isinstance(catalogs, Mapping) else dict(catalogs)

    def screen(self, request: ScreenRequest) -> ScreenResponse:
        cat = _catalog_for(self, request)
        scored = sorted(cat.descriptors(), key=lambda d: (-stub_affinity(request.category, d), d.id))
        return ScreenResponse(tuple(d.id for d in scored[: request.k]))


def build_prompt(catalog_name: str, category: str, k: int = 5) -> str:
    return (
        f"From the {catalog_name}, name the {k} objects whose grasping is most similar "
        f"to a {category}; give each name together with its index."
    )


class LiveScreener:
    """HTTP client for an external screening model (endpoint/key from the environment)."""

    def __init__(self, catalogs, url: str | None = None, key: str | None = None, timeout: float = 30.0):
        if isinstance(catalogs, Catalog):
            catalogs = [catalogs]
        self.catalogs = {c.name: c for c in catalogs} if not isinstance(catalogs, Mapping) else dict(catalogs)
        self.url = url if url is not None else os.environ.get("SCREENER_URL")
        self.key = key if key is not None else os.environ.get("SCREENER_KEY")
        self.timeout = timeout
        self._lock = threading.Lock()

    def screen(self, request: ScreenRequest) -> ScreenResponse:
        cat = _catalog_for(self, request)
        if not self.url:
            raise ScreenerUnavailable("SCREENER_URL is not set")
        body = dict(request.to_dict(), prompt=build_prompt(cat.name, request.category, request.k))
        headers = {"Content-Type": "application/json"}
        if self.key:
            headers["Authorization"] = f"Bearer {self.key}"
        req = urllib.request.Request(self.url, json.dumps(body).encode(), headers, method="POST")
        with self._lock:
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    payload = json.loads(resp.read().decode())
            except (urllib.error.URLError, OSError, ValueError) as exc:
                raise ScreenerUnavailable(str(exc)) from exc
        if isinstance(payload, dict) and "candidateIds" in payload:
            ids = [i for i in payload["candidateIds"] if i in cat]
            ids = list(dict.fromkeys(ids))
            if not ids:
                raise NoMatches("no returned id is in the catalog")
            return ScreenResponse(tuple(ids[: request.k]))
        text = payload.get("answer", "") if isinstance(payload, dict) else str(payload)
        return ScreenResponse(parse_screen_answer(text, cat).candidate_ids[: request.k])


def _catalog_for(screener, request: ScreenRequest) -> Catalog:
    try:
        return screener.catalogs[request.catalog_name]
    except KeyError:
        raise UnknownCatalog(request.catalog_name) from None


def screen_candidates(screener: CandidateScreener, request: ScreenRequest) -> ScreenResponse:
    if not request.category or not request.category.strip():
        raise ValueError("category must be nonempty")
    if request.k < 1:
        raise ValueError("k must be at least 1")
    cat = _catalog_for(screener, request)
    resp = screener.screen(request)
    ids = tuple(dict.fromkeys(i for i in resp.candidate_ids if i in cat))
    return ScreenResponse(ids[: request.k])


_INDEX_RE = re.compile(r"(?<![0-9A-Za-z])(\d+)_")


def parse_screen_answer(text: str, catalog: Catalog) -> ScreenResponse:
    """Pick catalog ids out of free text by their numeric index prefixes."""
    index = catalog.by_index()
    found = []
    for m in _INDEX_RE.finditer(text or ""):
        mid = index.get(m.group(1))
        if mid is not None and mid not in found:
            found.append(mid)
    if not found:
        raise NoMatches("no catalog index found in the answer")
    return ScreenResponse(tuple(found))
