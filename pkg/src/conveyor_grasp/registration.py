"""Coarse-to-fine rigid registration: triangle RANSAC followed by point-to-point ICP."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EmptyCloud
from .geometry import PointCloud, Pose, voxel_downsample
from .kernels import SpatialGrid, backend_module

MIN_POINTS = 50


@dataclass(frozen=True)
class RegParams:
    ransac_iterations: int = 4096
    inlier_threshold: float = 0.005
    icp_max_iterations: int = 60
    icp_tolerance: float = 1e-6
    coarse_voxel: float = 0.015
    correspondence_tol: float = 0.012
    min_side: float = 0.02
    verify_points: int = 80
    stop_fraction: float = 0.9
    refine_top: int = 6
    flip_top: int = 2
    final_top: int = 3
    max_correspondence: float = 0.03
    select_iterations: int = 10
    quick_voxel: float = 0.008
    quick_iterations: int = 15
    fine_voxel: float = 0.003
    seed: int = 0


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    transform: Pose  # model -> scene
    fitness: float
    inlier_rmse: float
    iterations: int
    converged: bool = True
    rms_history: tuple = field(default_factory=tuple)
    scene_inlier_ratio: float = 0.0
    ransac_iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "transform": self.transform.to_dict(),
            "fitness": self.fitness,
            "inlierRmse": self.inlier_rmse,
            "iterations": self.iterations,
            "converged": self.converged,
            "sceneInlierRatio": self.scene_inlier_ratio,
        }


def _points(c) -> np.ndarray:
    return np.ascontiguousarray(c.points if isinstance(c, PointCloud) else c, dtype=np.float64).reshape(-1, 3)


def _check_geometry(pts: np.ndarray, what: str) -> None:
    if len(pts) < MIN_POINTS:
        raise DegenerateInput(f"{what} has {len(pts)} points, need at least {MIN_POINTS}")
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[0] < 1e-6:
        raise DegenerateInput(f"{what} collapses to a single point")
    if s[1] < 1e-6 * s[0] + 1e-9:
        raise DegenerateInput(f"{what} is collinear")


def kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rigid transform with ``T(src) ~ dst``."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return Pose.from_matrix(R, cd - R @ cs)


def fitness_of(model, scene, transform: Pose, inlier_threshold: float, grid: SpatialGrid | None = None) -> float:
    if inlier_threshold <= 0:
        raise ValueError("inlier_threshold must be positive")
    m, s = _points(model), _points(scene)
    if len(m) == 0 or len(s) == 0:
        raise EmptyCloud("fitness of an empty cloud")
    grid = grid or SpatialGrid(s, inlier_threshold)
    idx, _ = grid.query(transform.apply(m), inlier_threshold)
    return float(np.count_nonzero(idx >= 0)) / len(m)


def icp(model_grid: SpatialGrid, scene: np.ndarray, init: Pose, max_iter: int, tol: float,
        max_corr: float = np.inf):
    """Scene-to-model point-to-point ICP; returns (pose, rms history, converged).

    Pairs farther apart than ``max_corr`` are ignored (all pairs are kept if
    fewer than three remain).
    """
    T = init
    model = model_grid.points
    history = []
    converged = False

    def pairs(T):
        idx, d2 = model_grid.query(T.inverse().apply(scene), max_corr)
        ok = idx >= 0
        if np.count_nonzero(ok) < 3:
            idx, d2 = model_grid.query(T.inverse().apply(scene))
            ok = np.ones(len(idx), dtype=bool)
        return idx[ok], d2[ok], ok

    for _ in range(max_iter):
        idx, d2, ok = pairs(T)
        rms = float(np.sqrt(d2.mean()))
        if history and history[-1] - rms < tol:
            history.append(rms)
            converged = True
            break
        history.append(rms)
        T = kabsch(model[idx], scene[ok])
    else:
        _, d2, _ = pairs(T)
        history.append(float(np.sqrt(d2.mean())))
        converged = history[-2] - history[-1] < tol
    return T, tuple(history), converged


def _coarse(pts: np.ndarray, voxel: float, floor: int = 40) -> np.ndarray:
    v = voxel
    sub = pts[voxel_downsample(pts, v)]
    while len(sub) < floor and v > 1e-3:
        v *= 0.5
        sub = pts[voxel_downsample(pts, v)]
    return np.ascontiguousarray(sub)


def _half_turns(points: np.ndarray) -> list:
    mu = points.mean(axis=0)
    _, vecs = np.linalg.eigh(np.cov((points - mu).T))
    out = []
    for k in range(3):
        R = 2.0 * np.outer(vecs[:, k], vecs[:, k]) - np.eye(3)
        out.append(Pose.from_matrix(R, mu - R @ mu))
    return out


def register(model, scene, params: RegParams = RegParams(), backend=None) -> RegistrationResult:
    m_full, s_full = _points(model), _points(scene)
    _check_geometry(m_full, "model")
    _check_geometry(s_full, "scene")
    p = params
    rng = np.random.default_rng(p.seed)

    m_c = _coarse(m_full, p.coarse_voxel)
    s_c = _coarse(s_full, p.coarse_voxel)
    model_d = np.ascontiguousarray(np.linalg.norm(m_c[:, None, :] - m_c[None, :, :], axis=2))
    n_it = int(p.ransac_iterations)
    triples = np.ascontiguousarray(rng.integers(0, len(s_c), size=(n_it, 3)), dtype=np.int64)
    anchors = np.ascontiguousarray(rng.integers(0, len(m_c), size=n_it), dtype=np.int64)
    picks = np.ascontiguousarray(rng.random((n_it, 2)))
    nv = min(p.verify_points, len(s_c))
    verify = np.ascontiguousarray(s_c[np.sort(rng.choice(len(s_c), nv, replace=False))])
    keep = max(1, p.refine_top)
    out_R = np.zeros((keep, 9))
    out_t = np.zeros((keep, 3))
    out_score = np.full(keep, -1, dtype=np.int64)
    cand_buf = np.zeros(len(m_c), dtype=np.int64)
    # a coarse-cloud inlier radius: samples of the two clouds do not coincide
    coarse_thr = max(p.inlier_threshold, 0.75 * p.coarse_voxel)
    ran = backend_module(backend).ransac_triangles(
        s_c, m_c, model_d, verify, triples, anchors, picks,
        p.correspondence_tol, coarse_thr, p.min_side, p.stop_fraction,
        cand_buf, out_R, out_t, out_score,
    )

    hyps = [Pose.from_matrix(out_R[i].reshape(3, 3), out_t[i]) for i in range(keep) if out_score[i] >= 0]
    if not hyps:
        hyps = [Pose.from_translation(s_full.mean(axis=0) - m_full.mean(axis=0))]

    m_grid = SpatialGrid(m_full, p.inlier_threshold)
    # cheap screening pass over every hypothesis, then a full refinement of the winner
    s_quick = s_full[voxel_downsample(s_full, p.quick_voxel)]
    ranked = []
    for T0 in hyps:
        T, hist, _ = icp(m_grid, s_quick, T0, p.quick_iterations, 1e-5, p.max_correspondence)
        _, d2 = m_grid.query(T.inverse().apply(s_quick), p.inlier_threshold)
        ranked.append((float(np.isfinite(d2).mean()), -hist[-1], T))
    ranked.sort(key=lambda r: (r[0], r[1]), reverse=True)
    # half-turns about the model's principal axes: the usual wrong answer on near-symmetric parts
    flips = _half_turns(m_full)
    extra = []
    for _, _, T0 in ranked[: max(1, p.flip_top)]:
        for F in flips:
            T, hist, _ = icp(m_grid, s_quick, T0 @ F, p.quick_iterations, 1e-5, p.max_correspondence)
            _, d2 = m_grid.query(T.inverse().apply(s_quick), p.inlier_threshold)
            extra.append((float(np.isfinite(d2).mean()), -hist[-1], T))
    ranked = sorted(ranked + extra, key=lambda r: (r[0], r[1]), reverse=True)
    s_fine = s_full[voxel_downsample(s_full, p.fine_voxel)] if p.fine_voxel > 0 else s_full
    finals = []
    for _, _, T0 in ranked:
        if any(T0.rotation_angle_to(F) < np.radians(2) and np.linalg.norm(T0.t - F.t) < 0.002 for F in finals):
            continue
        finals.append(T0)
        if len(finals) == max(1, p.final_top):
            break
    def score(T):
        _, d2 = m_grid.query(T.inverse().apply(s_fine), p.inlier_threshold)
        ok = np.isfinite(d2)
        return float(np.count_nonzero(ok)) / len(s_fine), (float(np.sqrt(d2[ok].mean())) if ok.any() else 0.0)

    if len(finals) > 1:
        judged = []
        for T0 in finals:
            T, _, _ = icp(m_grid, s_fine, T0, p.select_iterations, p.icp_tolerance, p.max_correspondence)
            r, e = score(T)
            judged.append((r, -e, T))
        start = max(judged, key=lambda j: (j[0], j[1]))[2]
    else:
        start = finals[0]
    T, hist, conv = icp(m_grid, s_fine, start, p.icp_max_iterations, p.icp_tolerance, p.max_correspondence)
    ratio, rmse = score(T)
    fit = fitness_of(m_full, s_full, T, p.inlier_threshold)
    return RegistrationResult(T, fit, rmse, len(hist) - 1, conv, hist, ratio, int(ran))
