import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conveyor_grasp.errors import EmptySelection
from conveyor_grasp.geometry import Pose
from conveyor_grasp.perception import (
    CameraSpec,
    backproject,
    belt_region_px,
    default_global_camera,
    export_frame,
    project_world,
    read_pgm,
    render,
    segment_global,
    top_down_pose,
    write_pgm,
)
from conveyor_grasp.shapes import Part, Shape, box, cylinder, sphere
from conveyor_grasp.sim_world import Scenario, WorldObject, WorldState, generate_scenario

SPEC = CameraSpec()


def _obj(i, shape, x=1.0, y=0.0, yaw=0.0, z=0.0, category="thing"):
    return WorldObject(i, f"{i:03d}_x", category, shape, Pose.from_axis_angle([0, 0, 1], yaw, [x, y, z]))


def test_camera_spec_validation():
    for bad in (dict(fov_along=0.0), dict(fov_across=np.pi), dict(height=1), dict(frame_rate=0.0),
                dict(noise_sigma=-1.0)):
        with pytest.raises(ValueError):
            CameraSpec(**bad)


def test_empty_world_has_no_labels():
    f = render(WorldState(0.05), top_down_pose(1.0, 0.0, 0.5), SPEC)
    assert not f.labels.any()
    # the belt itself is visible as unlabeled background
    assert np.all(f.depth > 0)


def test_looking_at_nothing_gives_zero_depth():
    # optical axis along world +z: nothing above the camera
    up = Pose.from_matrix(np.eye(3), [1.0, 0.0, 0.5])
    f = render(WorldState(0.05), up, SPEC)
    assert not f.depth.any() and not f.labels.any()


def test_cube_pixel_width_matches_pinhole():
    # 10 cm cube, camera 1 m above the cube centre (0.95 m above its top face)
    world = WorldState(0.05, (_obj(1, box(0.1, 0.1, 0.1)),))
    f = render(world, top_down_pose(1.0, 0.0, 1.05), SPEC)
    rows, cols = np.nonzero(f.labels == 1)
    half = np.arctan(0.05 / 0.95)
    exp_rows = 2 * SPEC.fy * np.tan(half)
    exp_cols = 2 * SPEC.fx * np.tan(half)
    assert abs((rows.max() - rows.min() + 1) - exp_rows) <= 1
    assert abs((cols.max() - cols.min() + 1) - exp_cols) <= 1


def test_occluded_object_loses_pixels():
    low = _obj(1, box(0.12, 0.12, 0.04))
    high = _obj(2, box(0.06, 0.06, 0.04), z=0.04)
    cam = top_down_pose(1.0, 0.0, 0.6)
    alone = render(WorldState(0.05, (low,)), cam, SPEC)
    both = render(WorldState(0.05, (low, high)), cam, SPEC)
    assert (both.labels == 1).sum() < (alone.labels == 1).sum()


def test_backproject_center_pixel_hits_belt():
    H = 0.7
    f = render(WorldState(0.05), top_down_pose(1.0, 0.0, H), CameraSpec(height=480, width=640))
    # the optical axis passes between the four centre pixels; their mean lands under the camera
    rows = [239, 239, 240, 240]
    cols = [319, 320, 319, 320]
    pts = backproject(f, (rows, cols)).points
    np.testing.assert_allclose(pts.mean(axis=0), [1.0, 0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(pts[:, 2], 0.0, atol=1e-9)
    assert f.depth[239:241, 319:321].min() == pytest.approx(H, rel=1e-5)


def test_backproject_empty_selection():
    f = render(WorldState(0.05), top_down_pose(1.0, 0.0, 0.5), SPEC)
    with pytest.raises(EmptySelection):
        backproject(f, np.zeros(f.depth.shape, dtype=bool))
    up = render(WorldState(0.05), Pose.from_matrix(np.eye(3), [1.0, 0.0, 0.5]), SPEC)
    with pytest.raises(EmptySelection):
        backproject(up, (np.array([10]), np.array([10])))


def test_sphere_round_trip_within_half_pixel():
    r = 0.05
    world = WorldState(0.05, (_obj(1, sphere(r)),))
    cam = top_down_pose(1.0, 0.02, 0.6)
    f = render(world, cam, SPEC)
    mask = f.labels == 1
    pts = backproject(f, mask).points
    dist = np.linalg.norm(pts - [1.0, 0.0, r], axis=1)
    # pixel footprint at the sphere's distance
    foot = 0.6 / SPEC.fy
    assert np.all(np.abs(dist - r) <= 0.5 * foot + 1e-6)


def test_reprojection_lands_on_same_pixel():
    world = generate_scenario(Scenario("P3", "C2", "A4"))
    f = render(world, default_global_camera(), SPEC)
    mask = f.labels > 0
    rows, cols = np.nonzero(mask)
    pts = backproject(f, mask).points
    rc = project_world(f, SPEC, pts)
    np.testing.assert_array_equal(np.floor(rc[:, 0]).astype(int), rows)
    np.testing.assert_array_equal(np.floor(rc[:, 1]).astype(int), cols)


# ---------------------------------------------------------------- segmentation

def test_object_outside_belt_region_is_excluded():
    on = _obj(1, box(0.06, 0.06, 0.06), x=1.0)
    off = _obj(2, box(0.06, 0.06, 0.06), x=1.0, y=0.45)  # beside the belt
    world = WorldState(0.05, (on, off))
    cam = top_down_pose(1.0, 0.0, 0.8)
    f = render(world, cam, SPEC)
    region = belt_region_px(cam, SPEC, world.belt_bounds)
    assert (f.labels == 2).any()
    ids = [i.id for i in segment_global(f, region)]
    assert ids == [1]


def test_contained_box_is_dropped():
    # a thin cap on top of a wider bottle, as separate instances
    bottle = _obj(1, cylinder(0.04, 0.12), category="bottle")
    cap = _obj(2, Shape("cylinder", (Part("cylinder", (0, 0, 0.005), (0.015, 0.01)),)), z=0.12, category="bottle cap")
    world = WorldState(0.05, (bottle, cap))
    cam = top_down_pose(1.0, 0.0, 0.7)
    f = render(world, cam, SPEC)
    assert (f.labels == 2).sum() > 20
    inst = segment_global(f, belt_region_px(cam, SPEC, world.belt_bounds))
    assert [i.id for i in inst] == [1]
    assert inst[0].category == "bottle"


def test_unoccluded_confidence_is_one():
    world = WorldState(0.05, (_obj(1, box(0.08, 0.06, 0.05)),))
    cam = top_down_pose(1.0, 0.0, 0.7)
    f = render(world, cam, SPEC)
    (inst,) = segment_global(f, belt_region_px(cam, SPEC, world.belt_bounds))
    assert inst.confidence == 1.0
    assert len(inst.cloud) == (f.labels == 1).sum()


def test_segment_ids_unique_and_clouds_disjoint():
    world = generate_scenario(Scenario("P3", "C4", "A7"))
    cam = default_global_camera()
    f = render(world, cam, SPEC)
    inst = segment_global(f, belt_region_px(cam, SPEC, world.belt_bounds))
    ids = [i.id for i in inst]
    assert len(ids) == len(set(ids))
    seen = set()
    for i in inst:
        keys = {tuple(p) for p in np.round(i.cloud.points, 12)}
        assert not keys & seen
        seen |= keys
    for i in inst:
        assert 0 < i.confidence <= 1


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.15, 0.15), st.floats(-0.1, 0.1), st.floats(0.02, 0.08))
def test_adding_an_occluder_never_raises_confidence(dx, dy, size):
    base = (_obj(1, box(0.1, 0.08, 0.05), x=1.0), _obj(2, cylinder(0.035, 0.09), x=1.12, y=0.02))
    occ = _obj(3, box(size, size, 0.03), x=1.0 + dx, y=dy, z=0.12)
    cam = default_global_camera().translated([0.8, 0.0, 0.0])
    belt = WorldState(0.05).belt_bounds
    before = {i.id: i.confidence for i in segment_global(render(WorldState(0.05, base), cam, SPEC),
                                                       belt_region_px(cam, SPEC, belt), min_pixels=1)}
    after = {i.id: i.confidence for i in segment_global(render(WorldState(0.05, base + (occ,)), cam, SPEC),
                                                      belt_region_px(cam, SPEC, belt), min_pixels=1)}
    for k, c in after.items():
        if k in before:
            assert c <= before[k] + 1e-12


def test_render_is_deterministic_and_noise_is_seeded():
    world = generate_scenario(Scenario("P2", "C3", "A2"))
    cam = default_global_camera()
    a, b = render(world, cam, SPEC), render(world, cam, SPEC)
    np.testing.assert_array_equal(a.depth, b.depth)
    noisy = CameraSpec(noise_sigma=0.002)
    n1 = render(world, cam, noisy, np.random.default_rng(1))
    n2 = render(world, cam, noisy, np.random.default_rng(1))
    np.testing.assert_array_equal(n1.depth, n2.depth)
    assert not np.array_equal(n1.depth, a.depth)


def test_pgm_round_trip(tmp_path):
    img = np.random.default_rng(0).integers(0, 65535, size=(7, 5))
    write_pgm(tmp_path / "x.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "x.pgm"), img)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "y.pgm", np.zeros((2, 2, 2)))


def test_export_frame_writes_depth_and_labels(tmp_path):
    world = WorldState(0.05, (_obj(1, box(0.1, 0.1, 0.1)),))
    f = render(world, top_down_pose(1.0, 0.0, 0.6), SPEC)
    dpath, lpath = export_frame(f, tmp_path / "sub" / "frame")
    np.testing.assert_array_equal(read_pgm(lpath), f.labels)
    np.testing.assert_array_equal(read_pgm(dpath), np.round(f.depth * 1000))
