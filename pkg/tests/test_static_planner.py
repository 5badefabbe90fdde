import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from conveyor_grasp.errors import InvalidWindow
from conveyor_grasp.geometry import BELT_AXIS, Aabb, PointCloud, Pose, build_swept_regions
from conveyor_grasp.gripper import GraspCandidate, GripperSpec, Stability
from conveyor_grasp.modeldb import default_catalog
from conveyor_grasp.registration import RegistrationResult
from conveyor_grasp.shapes import box
from conveyor_grasp.static_planner import (
    PlannerConfig,
    PlanOutcome,
    PlanTarget,
    ReachModel,
    classify_stability,
    filter_feasible,
    grasp_checks,
    is_feasible,
    plan_object,
    plan_sequence,
    pregrasp_body_box,
    score_priority,
    transfer_grasps,
)

GRIPPER = GripperSpec()
REACH = ReachModel()
CAT = default_catalog()


def _grasp(center, width, yaw=0.0, tilt=0.0, contacts=None):
    """Approach straight down (optionally tilted about the closing axis); closing axis at ``yaw``."""
    x = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    z = Pose.from_axis_angle(x, tilt).rotate(np.array([0.0, 0.0, -1.0]))
    R = np.column_stack([x, np.cross(z, x), z])
    return GraspCandidate(Pose.from_matrix(R, center), width, contacts)


def _target(i, mid, x, y, yaw=0.0, conf=1.0, fitness=1.0):
    m = CAT.model(mid)
    T = Pose.from_axis_angle([0, 0, 1], yaw, [x, y, 0.0])
    pts = T.apply(m.surface.points)
    nrm = T.rotate(m.surface.normals)
    seen = nrm[:, 2] > -0.2  # roughly what a camera above would see
    reg = RegistrationResult(T, fitness, 0.0, 1)
    return PlanTarget(i, conf, PointCloud(pts[seen]), PointCloud(pts, nrm), m, reg)


def _box_cloud(size, center):
    return box(*size).sample_surface(1500, 0).points + [center[0], center[1], 0.0]


# ---------------------------------------------------------------- transfer

def test_transfer_identity_and_translation():
    m = CAT.model("003_cube_block")
    ident = transfer_grasps(m, RegistrationResult(Pose.identity(), 1.0, 0.0, 1))
    for a, b in zip(ident, m.grasps):
        np.testing.assert_allclose(a.pose.matrix(), b.pose.matrix(), atol=1e-15)
    t = np.array([0.3, -0.1, 0.02])
    moved = transfer_grasps(m, RegistrationResult(Pose.from_translation(t), 1.0, 0.0, 1))
    for a, b in zip(moved, m.grasps):
        np.testing.assert_allclose(a.center, b.center + t, atol=1e-15)
        np.testing.assert_allclose(a.contacts, b.contacts + t, atol=1e-15)


def test_transfer_quarter_turn_rotates_axes_keeps_widths():
    m = CAT.model("010_l_bracket")
    Rz = Pose.from_axis_angle([0, 0, 1], np.pi / 2)
    out = transfer_grasps(m, RegistrationResult(Rz, 1.0, 0.0, 1))
    for a, b in zip(out, m.grasps):
        assert a.width == b.width
        ax = b.closing_axis
        np.testing.assert_allclose(a.closing_axis, [-ax[1], ax[0], ax[2]], atol=1e-12)
        assert a.stability is Stability.POTENTIAL


# ---------------------------------------------------------------- feasibility rules

BOX = (0.06, 0.04, 0.05)


def _isolated():
    pts = _box_cloud(BOX, (1.0, 0.0))
    regions = build_swept_regions(Aabb.from_points(pts), [], BELT_AXIS, 0.5)
    return pts, regions


def test_clear_top_grasp_is_kept():
    pts, regions = _isolated()
    checks = grasp_checks(_grasp([1.0, 0.0, 0.03], 0.06), pts, regions, GRIPPER, REACH)
    assert checks == {k: True for k in checks}
    assert is_feasible(_grasp([1.0, 0.0, 0.03], 0.06), pts, regions, GRIPPER, REACH)


def test_fingers_inside_object_rejected():
    pts, regions = _isolated()
    c = grasp_checks(_grasp([1.0, 0.0, 0.03], 0.02), pts, regions, GRIPPER, REACH)
    assert not c["fingers_clear"]


def test_empty_closure_rejected():
    pts, regions = _isolated()
    c = grasp_checks(_grasp([1.0, 0.2, 0.03], 0.06), pts, regions, GRIPPER, REACH)
    assert c["fingers_clear"] and not c["closure_filled"]


def test_finger_below_belt_rejected():
    pts, regions = _isolated()
    c = grasp_checks(_grasp([1.0, 0.0, 0.005], 0.06), pts, regions, GRIPPER, REACH)
    assert not c["belt_clear"]


def test_out_of_reach_rejected():
    pts = _box_cloud(BOX, (1.0, 0.6))
    regions = build_swept_regions(Aabb.from_points(pts), [], BELT_AXIS, 0.5)
    c = grasp_checks(_grasp([1.0, 0.6, 0.03], 0.06), pts, regions, GRIPPER, REACH)
    assert not c["reachable"]
    # a too-steep tilt is also unreachable
    pts, regions = _isolated()
    assert not grasp_checks(_grasp([1.0, 0.0, 0.03], 0.06, tilt=np.radians(70)), pts, regions,
                            GRIPPER, REACH)["reachable"]


def test_pregrasp_in_neighbour_strip_rejected():
    pts = _box_cloud(BOX, (1.0, 0.0))
    # a tall neighbour downstream whose red strip covers the back-off corridor
    tall = Aabb([1.2, -0.05, 0.0], [1.26, 0.05, 0.3])
    regions = build_swept_regions(Aabb.from_points(pts), [tall], BELT_AXIS, 0.5)
    c = grasp_checks(_grasp([1.0, 0.0, 0.03], 0.06), pts, regions, GRIPPER, REACH)
    assert not c["pregrasp_clear"]
    assert c["fingers_clear"] and c["closure_filled"]


def test_neighbour_inside_finger_rejected():
    pts, regions = _isolated()
    # a thin post standing exactly where the +x finger goes
    post = _box_cloud((0.006, 0.01, 0.08), (1.044, 0.0))
    g = _grasp([1.0, 0.0, 0.03], 0.06)
    assert not grasp_checks(g, pts, regions, GRIPPER, REACH, others=post)["neighbours_clear"]
    solid = (box(0.006, 0.01, 0.08), Pose.from_translation([1.044, 0.0, 0.0]))
    assert not grasp_checks(g, pts, regions, GRIPPER, REACH, solids=[solid])["neighbours_clear"]
    far = (box(0.006, 0.01, 0.08), Pose.from_translation([1.3, 0.0, 0.0]))
    assert grasp_checks(g, pts, regions, GRIPPER, REACH, solids=[far])["neighbours_clear"]


def test_ordering_puts_overlap_centres_last():
    size = (0.12, 0.06, 0.04)
    pts = _box_cloud(size, (1.0, 0.0))
    low = Aabb([1.3, 0.0, 0.0], [1.4, 0.1, 0.02])
    regions = build_swept_regions(Aabb.from_points(pts), [low], BELT_AXIS, 0.5)
    inside = [_grasp([x, 0.005, 0.01], 0.06, yaw=np.pi / 2) for x in (1.0, 1.02)]
    outside = [_grasp([x, -0.005, 0.01], 0.06, yaw=np.pi / 2) for x in (1.03, 0.99)]
    out = filter_feasible(inside + outside, pts, regions, GRIPPER, REACH)
    assert len(out) == 4
    got = [(round(g.center[0], 3), round(g.center[1], 3)) for g in out]
    assert got == [(0.99, -0.005), (1.03, -0.005), (1.0, 0.005), (1.02, 0.005)]


def _strictly_intersect(a_lo, a_hi, lo, hi):
    return np.all(a_lo < hi, axis=-1) & np.all(lo < a_hi, axis=-1)


def test_kept_grasps_pass_sweep_oracle():
    rng = np.random.default_rng(5)
    kept_total = 0
    for _ in range(100):
        tsize = rng.uniform([0.03, 0.03, 0.02], [0.1, 0.1, 0.12])
        tc = rng.uniform([0.8, -0.1], [1.2, 0.1])
        pts = _box_cloud(tsize, tc)
        target = Aabb.from_points(pts)
        others = []
        for _ in range(rng.integers(0, 4)):
            c = rng.uniform([0.6, -0.2, 0.0], [1.4, 0.2, 0.0])
            s = rng.uniform([0.02, 0.02, 0.02], [0.1, 0.1, 0.15])
            nb = Aabb([c[0] - s[0] / 2, c[1] - s[1] / 2, 0.0], [c[0] + s[0] / 2, c[1] + s[1] / 2, s[2]])
            if not nb.intersects(target):
                others.append(nb)
        extent = float(rng.uniform(0.2, 0.8))
        regions = build_swept_regions(target, others, BELT_AXIS, extent)
        grasps = []
        for _ in range(30):
            yaw = rng.uniform(0, np.pi)
            ctr = [tc[0] + rng.uniform(-0.02, 0.02), tc[1] + rng.uniform(-0.02, 0.02), rng.uniform(0.01, tsize[2])]
            grasps.append(_grasp(ctr, float(rng.uniform(0.02, 0.12)), yaw, rng.uniform(-0.5, 0.5)))
        kept = filter_feasible(grasps, pts, regions, GRIPPER, REACH)
        kept_total += len(kept)
        steps = np.arange(0.0, extent + 1e-9, 0.001)
        for g in kept:
            body = pregrasp_body_box(g, GRIPPER)
            shift = steps[:, None] * BELT_AXIS
            assert not _strictly_intersect(body.lo, body.hi, target.lo - shift, target.hi - shift).any()
            for nb in others:
                for sgn in (-1, 1):
                    sh = sgn * shift
                    assert not _strictly_intersect(body.lo, body.hi, nb.lo + sh, nb.hi + sh).any()
    assert kept_total > 50


# ---------------------------------------------------------------- stability

def _plate(x, normal, n=15, half=0.015):
    """Square patch of points through (x, 0, 0.03) perpendicular to ``normal``."""
    normal = np.asarray(normal, float) / np.linalg.norm(normal)
    u = np.cross(normal, [0, 1, 0])
    u /= np.linalg.norm(u)
    v = np.cross(normal, u)
    a, b = np.meshgrid(np.linspace(-half, half, n), np.linspace(-half, half, n))
    return np.array([x, 0, 0.03]) + a.reshape(-1, 1) * u + b.reshape(-1, 1) * v


def test_flat_plate_pinch_is_stable():
    cloud = np.concatenate([_plate(-0.03, [1, 0, 0]), _plate(0.03, [1, 0, 0])])
    g = _grasp([0, 0, 0.03], 0.06, contacts=np.array([[-0.03, 0, 0.03], [0.03, 0, 0.03]]))
    assert classify_stability(g, cloud) is Stability.STABLE


def test_inclined_contact_is_unstable():
    cloud = np.concatenate([_plate(-0.03, [1, 0, 0]), _plate(0.03, [1, 0, 1])])
    g = _grasp([0, 0, 0.03], 0.06, contacts=np.array([[-0.03, 0, 0.03], [0.03, 0, 0.03]]))
    assert classify_stability(g, cloud) is Stability.UNSTABLE


def test_threshold_is_thirty_degrees():
    for deg, want in ((29.0, Stability.STABLE), (31.0, Stability.UNSTABLE)):
        n = [np.cos(np.radians(deg)), 0, np.sin(np.radians(deg))]
        cloud = np.concatenate([_plate(-0.03, [1, 0, 0]), _plate(0.03, n)])
        g = _grasp([0, 0, 0.03], 0.06, contacts=np.array([[-0.03, 0, 0.03], [0.03, 0, 0.03]]))
        assert classify_stability(g, cloud) is want


def test_hidden_contact_is_potential():
    cloud = _plate(-0.03, [1, 0, 0])
    g = _grasp([0, 0, 0.03], 0.06, contacts=np.array([[-0.03, 0, 0.03], [0.03, 0, 0.03]]))
    assert classify_stability(g, cloud) is Stability.POTENTIAL
    assert classify_stability(_grasp([0, 0, 0.03], 0.06), cloud) is Stability.POTENTIAL


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_stability_invariant_under_rigid_motion(seed):
    rng = np.random.default_rng(seed)
    m = CAT.model("010_l_bracket")
    T = Pose.from_matrix(Rotation.random(random_state=seed).as_matrix(), rng.uniform(-1, 1, 3))
    cloud = m.surface.points[m.surface.normals[:, 2] > -0.2]
    moved = T.apply(cloud)
    for g in m.grasps[:: 16]:
        assert classify_stability(g.transformed(T), moved) is classify_stability(g, cloud)


# ---------------------------------------------------------------- priority

def test_priority_examples():
    assert score_priority(0.9, 0.8, 20, 5, 5.0) == pytest.approx(2.16, abs=1e-12)
    assert score_priority(0.3, 0.7, 11, 11, 5.0) == 0.0
    assert score_priority(0.9, 0.8, 20, 5, 10.0) == pytest.approx(score_priority(0.9, 0.8, 20, 5, 5.0) / 2)


def test_priority_errors():
    with pytest.raises(InvalidWindow):
        score_priority(1, 1, 1, 0, 0.0)
    with pytest.raises(InvalidWindow):
        PlannerConfig(window=-1.0)
    with pytest.raises(ValueError):
        score_priority(1, 1, 1, 2, 5.0)
    with pytest.raises(ValueError):
        PlannerConfig(mode="fast")


def test_usable_prefers_stable_then_potential():
    s, u, p = (_grasp([0, 0, 0], 0.05).with_stability(k) for k in Stability)
    assert PlanOutcome(1, (u, p, s), 1, 0.0, 0.0).usable == (s,)
    assert PlanOutcome(1, (u, p), 1, 0.0, 0.0).usable == (p,)
    assert PlanOutcome(1, (u,), 1, 0.0, 0.0).usable == (u,)


# ---------------------------------------------------------------- per-object planning and sequence

def test_plan_object_accounting():
    t = _target(1, "004_soup_can", 1.0, 0.0, conf=0.9, fitness=0.8)
    cfg = PlannerConfig()
    out = plan_object(t, [], GRIPPER, REACH, cfg)
    assert out.evaluated <= round(cfg.window / cfg.eval_cost)
    assert out.elapsed == pytest.approx(out.evaluated * cfg.eval_cost)
    g_u = sum(g.stability is Stability.UNSTABLE for g in out.grasps)
    assert out.unstable_count == g_u <= len(out.grasps)
    assert out.priority == score_priority(0.9, 0.8, len(out.grasps), g_u, cfg.window)
    assert len(out.grasps) > 0 and not out.no_feasible


def test_short_window_evaluates_fewer():
    t = _target(1, "004_soup_can", 1.0, 0.0)
    a = plan_object(t, [], GRIPPER, REACH, PlannerConfig(window=1.0))
    b = plan_object(t, [], GRIPPER, REACH, PlannerConfig(window=5.0))
    assert a.evaluated == 25 and b.evaluated == 125
    assert len(a.grasps) <= len(b.grasps)


def test_unreachable_object_is_flagged_and_sequence_continues():
    far = _target(1, "003_cube_block", 1.0, 0.8)
    near = _target(2, "004_soup_can", 1.0, 0.0)
    seq = plan_sequence([far, near], GRIPPER, REACH)
    assert [o.object_id for o in seq] == [2, 1]
    assert seq[1].no_feasible and seq[1].priority == 0 and seq[1].grasps == ()


def test_single_object_sequence():
    seq = plan_sequence([_target(7, "003_cube_block", 1.0, 0.0)], GRIPPER, REACH)
    assert [o.object_id for o in seq] == [7]


def test_less_occluded_twin_goes_first():
    a = _target(1, "004_soup_can", 1.0, -0.1, conf=0.5)
    b = _target(2, "004_soup_can", 1.0, 0.1, conf=1.0)
    seq = plan_sequence([a, b], GRIPPER, REACH)
    assert seq[0].object_id == 2


def _brute_sequence(targets, cfg):
    remaining = list(targets)
    order = []
    while remaining:
        scored = []
        for t in remaining:
            o = plan_object(t, [x for x in remaining if x is not t], GRIPPER, REACH, cfg)
            scored.append((o.priority, t.confidence * t.fitness, o.object_id))
        best_p = max(s[0] for s in scored)
        tied = [s for s in scored if s[0] == best_p]
        best_q = max(s[1] for s in tied)
        pick = min((s for s in tied if s[1] == best_q), key=lambda s: str(s[2]))[2]
        order.append(pick)
        remaining = [t for t in remaining if t.id != pick]
    return order


def _random_scene(rng, n):
    ids = CAT.ids
    xs = 0.75 + 0.17 * np.arange(n) + rng.uniform(-0.02, 0.02, n)
    return [
        _target(int(i + 1), ids[int(rng.integers(len(ids)))], float(xs[i]), float(rng.uniform(-0.12, 0.12)),
                float(rng.uniform(0, np.pi)), conf=float(rng.uniform(0.4, 1.0)), fitness=float(rng.uniform(0.5, 1.0)))
        for i in range(n)
    ]


@pytest.mark.parametrize("seed", range(4))
def test_sequence_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    targets = _random_scene(rng, 3)
    cfg = PlannerConfig(window=1.0)
    seq = plan_sequence(targets, GRIPPER, REACH, cfg)
    assert [o.object_id for o in seq] == _brute_sequence(targets, cfg)
    # suffix: re-planning the remainder reproduces the tail
    rest = [t for t in targets if t.id != seq[0].object_id]
    assert [o.object_id for o in plan_sequence(rest, GRIPPER, REACH, cfg)] == [o.object_id for o in seq[1:]]


def test_uniform_confidence_scaling_keeps_order():
    rng = np.random.default_rng(11)
    targets = _random_scene(rng, 3)
    cfg = PlannerConfig(window=1.0)
    halved = [PlanTarget(t.id, 0.5 * t.confidence, t.observed, t.completed, t.model, t.registration) for t in targets]
    a = [o.object_id for o in plan_sequence(targets, GRIPPER, REACH, cfg)]
    b = [o.object_id for o in plan_sequence(halved, GRIPPER, REACH, cfg)]
    assert a == b


def test_outcome_to_dict():
    out = plan_object(_target(3, "003_cube_block", 1.0, 0.0), [], GRIPPER, REACH, PlannerConfig(window=0.4))
    d = out.to_dict()
    assert d["objectId"] == 3 and d["feasibleGrasps"] == len(d["grasps"]) == len(out.grasps)
