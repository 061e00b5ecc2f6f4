import numpy as np
import pytest
from pydantic import ValidationError

from waste_grasp_py.camera_geometry import (
    ColorFrame,
    DepthFrame,
    InstanceMask,
    PinholeIntrinsics,
    backproject_depth,
    backproject_pixel,
    depth_validity_ratio,
    masked_backprojection,
    project_point,
)
from waste_grasp_py.exceptions import (
    DimensionMismatch,
    EmptyCloud,
    EmptyMask,
    InvalidDepth,
    OutOfBounds,
    PreconditionViolation,
)


@pytest.fixture
def k():
    return PinholeIntrinsics(fx=615.0, fy=610.0, cx=320.0, cy=240.0)


def _frames(k, samples, depth_scale=0.001):
    depth = DepthFrame.from_array(np.asarray(samples, dtype=np.uint16), depth_scale=depth_scale)
    color = ColorFrame.from_array(np.full((k.height, k.width, 3), 7, dtype=np.uint8))
    return depth, color


def test_intrinsics_defaults_to_640x480():
    k = PinholeIntrinsics(fx=600, fy=600, cx=320, cy=240)
    assert (k.width, k.height) == (640, 480)
    assert k.depth_scale == 0.001


@pytest.mark.parametrize("fields", [
    dict(fx=0, fy=600, cx=320, cy=240),
    dict(fx=600, fy=-1, cx=320, cy=240),
    dict(fx=600, fy=600, cx=640, cy=240),
    dict(fx=600, fy=600, cx=320, cy=-0.5),
])
def test_intrinsics_rejects_invalid_values(fields):
    with pytest.raises(ValidationError):
        PinholeIntrinsics(**fields)


def test_backproject_principal_point(k):
    np.testing.assert_array_equal(backproject_pixel(k.cx, k.cy, 1.0, k), [0.0, 0.0, 1.0])


def test_backproject_one_focal_length_off_axis(k):
    np.testing.assert_allclose(backproject_pixel(k.cx + k.fx, k.cy, 2.0, k), [2.0, 0.0, 2.0])


def test_backproject_zero_depth_is_invalid(k):
    with pytest.raises(InvalidDepth):
        backproject_pixel(k.cx, k.cy, 0.0, k)


def test_backproject_outside_image(k):
    with pytest.raises(OutOfBounds):
        backproject_pixel(640, 10, 1.0, k)


def test_project_point_on_axis(k):
    assert project_point((0.0, 0.0, 1.0), k) == (k.cx, k.cy)


def test_project_point_behind_camera(k):
    with pytest.raises(InvalidDepth):
        project_point((1.0, 0.0, -1.0), k)


def test_projection_round_trip(k):
    rng = np.random.default_rng(7)
    us = rng.uniform(0, k.width, 10_000)
    vs = rng.uniform(0, k.height, 10_000)
    zs = rng.uniform(0.15, 3.0, 10_000)
    for u, v, z in zip(us, vs, zs):
        pu, pv = project_point(backproject_pixel(u, v, z, k), k)
        assert abs(pu - u) < 1e-6 and abs(pv - v) < 1e-6


def test_depth_frame_checks_sample_count():
    with pytest.raises(DimensionMismatch):
        DepthFrame(width=4, height=4, data=np.zeros(15, dtype=np.uint16))


def test_depth_frame_rejects_non_positive_scale():
    with pytest.raises(PreconditionViolation):
        DepthFrame(width=2, height=2, data=np.zeros(4), depth_scale=0.0)


def test_frames_are_read_only():
    depth = DepthFrame.from_array(np.ones((2, 3), dtype=np.uint16))
    with pytest.raises(ValueError):
        depth.data[0, 0] = 5


def test_mask_complement_and_equality():
    mask = InstanceMask.from_array(np.eye(3, dtype=bool))
    assert mask.complement().complement() == mask
    assert int(mask.complement().bits.sum()) == 6
    assert hash(mask) == hash(InstanceMask.from_array(np.eye(3, dtype=bool)))


def test_masked_backprojection_single_pixel(k):
    samples = np.zeros(k.shape, dtype=np.uint16)
    samples[240, 320] = 1000
    depth, color = _frames(k, samples)
    bits = np.zeros(k.shape, dtype=bool)
    bits[240, 320] = True

    cloud = masked_backprojection(depth, color, InstanceMask.from_array(bits), k)

    assert len(cloud) == 1
    np.testing.assert_allclose(cloud.points[0], [0.0, 0.0, 1.0])
    np.testing.assert_array_equal(cloud.colors[0], [7, 7, 7])
    np.testing.assert_array_equal(cloud.viewpoint, [0.0, 0.0, 0.0])


def test_masked_backprojection_all_invalid(k):
    depth, color = _frames(k, np.zeros(k.shape))
    bits = np.zeros(k.shape, dtype=bool)
    bits[10:20, 10:20] = True
    with pytest.raises(EmptyCloud):
        masked_backprojection(depth, color, InstanceMask.from_array(bits), k)


def test_masked_backprojection_planar_patch(k):
    samples = np.zeros(k.shape, dtype=np.uint16)
    samples[100:110, 200:210] = 500
    depth, color = _frames(k, samples)
    bits = samples > 0

    cloud = masked_backprojection(depth, color, InstanceMask.from_array(bits), k)

    vs, us = np.nonzero(bits)
    expected = np.column_stack([(us - k.cx) * 0.5 / k.fx, (vs - k.cy) * 0.5 / k.fy, np.full(100, 0.5)])
    assert len(cloud) == 100
    np.testing.assert_allclose(cloud.points, expected, atol=1e-12)


def test_masked_backprojection_respects_depth_range(k):
    samples = np.zeros(k.shape, dtype=np.uint16)
    samples[0, 0:3] = [100, 1000, 4000]  # 0.1 m, 1 m, 4 m
    depth, color = _frames(k, samples)
    bits = samples > 0
    cloud = masked_backprojection(depth, color, InstanceMask.from_array(bits), k, (0.15, 3.0))
    np.testing.assert_allclose(cloud.points[:, 2], [1.0])


def test_masked_backprojection_dimension_mismatch(k):
    depth, color = _frames(k, np.zeros(k.shape))
    with pytest.raises(DimensionMismatch):
        masked_backprojection(depth, color, InstanceMask.empty(10, 10), k)


def test_masked_backprojection_depth_linearity(k):
    rng = np.random.default_rng(3)
    samples = rng.integers(200, 1400, size=k.shape).astype(np.uint16)
    bits = rng.random(k.shape) < 0.01
    depth, color = _frames(k, samples, depth_scale=0.001)
    doubled, _ = _frames(k, samples, depth_scale=0.002)

    base = masked_backprojection(depth, color, InstanceMask.from_array(bits), k, (0.1, 2.0))
    scaled = masked_backprojection(doubled, color, InstanceMask.from_array(bits), k, (0.2, 4.0))

    np.testing.assert_array_equal(scaled.points, 2.0 * base.points)


def test_masked_backprojection_is_deterministic(k):
    rng = np.random.default_rng(11)
    samples = rng.integers(0, 2000, size=k.shape).astype(np.uint16)
    bits = rng.random(k.shape) < 0.05
    depth, color = _frames(k, samples)
    first = masked_backprojection(depth, color, InstanceMask.from_array(bits), k)
    second = masked_backprojection(depth, color, InstanceMask.from_array(bits), k)
    assert first.points.tobytes() == second.points.tobytes()
    assert len(first) <= int(bits.sum())


def test_backproject_depth_marks_invalid_pixels(k):
    samples = np.zeros(k.shape, dtype=np.uint16)
    samples[240, 320] = 1000
    depth, _ = _frames(k, samples)
    points, valid = backproject_depth(depth, k)
    assert points.shape == (480, 640, 3)
    assert int(valid.sum()) == 1
    np.testing.assert_allclose(points[240, 320], [0.0, 0.0, 1.0])
    assert np.isnan(points[0, 0]).all()


def test_masked_backprojection_selects_from_organized_frame(k):
    rng = np.random.default_rng(5)
    samples = rng.integers(0, 3500, size=k.shape).astype(np.uint16)
    bits = rng.random(k.shape) < 0.02
    depth, color = _frames(k, samples)

    cloud = masked_backprojection(depth, color, InstanceMask.from_array(bits), k)

    points, valid = backproject_depth(depth, k)
    selected = bits & valid
    assert len(cloud) == int(selected.sum())
    np.testing.assert_array_equal(cloud.points, points[selected])


@pytest.mark.parametrize("valid_count, expected", [(4, 1.0), (0, 0.0), (2, 0.5)])
def test_depth_validity_ratio(k, valid_count, expected):
    samples = np.zeros(k.shape, dtype=np.uint16)
    samples[0, :valid_count] = 800
    depth, _ = _frames(k, samples)
    bits = np.zeros(k.shape, dtype=bool)
    bits[0, :4] = True
    assert depth_validity_ratio(depth, InstanceMask.from_array(bits)) == expected


def test_depth_validity_ratio_empty_mask(k):
    depth, _ = _frames(k, np.zeros(k.shape))
    with pytest.raises(EmptyMask):
        depth_validity_ratio(depth, InstanceMask.empty(k.width, k.height))
