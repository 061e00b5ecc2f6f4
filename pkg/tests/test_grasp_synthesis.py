import numpy as np
import pytest

from tests.synthetic import box_front_face, cylinder_surface, random_axis_off_view, random_rotation
from waste_grasp_py.cloud_processing import PointCloud, centroid_and_principal_axes, estimate_normals
from waste_grasp_py.config_models import GraspConfig, GripperSpec, ScoreWeights
from waste_grasp_py.enums import WasteClass
from waste_grasp_py.exceptions import (
    EmptySlice,
    InsufficientCloud,
    MissingNormals,
    NoFeasibleGrasp,
    OneSidedSlice,
    PreconditionViolation,
)
from waste_grasp_py.grasp_synthesis import (
    ContactPoint,
    GraspingPlane,
    antipodality,
    build_grasping_plane,
    compute_best_grasp,
    grasping_plane_slice,
    score_contact_pair,
    split_opposing_regions,
)

CENTER = np.array([0.0, 0.0, 0.5])


@pytest.fixture
def gripper():
    return GripperSpec()


@pytest.fixture
def config():
    return GraspConfig()


def _noisy_cylinder(rng, axis=(0.0, 1.0, 0.0)):
    cloud = cylinder_surface(center=CENTER, axis=axis, noise=0.001, rng=rng)
    return estimate_normals(cloud, k=24)


def _no_near_tie(report):
    return len(report.candidates) < 2 or report.candidates[0].score - report.candidates[1].score > 1e-9


def _separated_ranks(report, margin=1e-9):
    """Ranks whose score differs from both neighbours by more than margin."""
    scores = [c.score for c in report.candidates]
    return [
        rank for rank, score in enumerate(scores)
        if (rank == 0 or scores[rank - 1] - score > margin)
        and (rank == len(scores) - 1 or score - scores[rank + 1] > margin)
    ]


def test_antipodality_of_opposed_normals_along_the_line():
    value = antipodality(np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]))
    assert value == pytest.approx(1.0)


def test_antipodality_of_identical_normals():
    n = np.array([0.0, 0.0, -1.0])
    assert antipodality(n, n, np.array([1.0, 0.0, 0.0])) == pytest.approx(0.0)
    along = np.array([1.0, 0.0, 0.0])
    assert antipodality(along, along, along) == pytest.approx(0.5)


def test_score_of_ideal_contact_pair_on_cylinder(gripper):
    plane = GraspingPlane(origin=CENTER, normal=np.array([0.0, 1.0, 0.0]), epsilon=0.005)
    pa = ContactPoint(index=0, position=CENTER + [-0.03, 0.0, 0.0], normal=np.array([-1.0, 0.0, 0.0]))
    pb = ContactPoint(index=1, position=CENTER + [0.03, 0.0, 0.0], normal=np.array([1.0, 0.0, 0.0]))

    score = score_contact_pair(pa, pb, gripper, plane, ScoreWeights())

    assert score == pytest.approx(1.0)
    assert score >= 0.8


def test_score_is_zero_beyond_gripper_opening(gripper):
    plane = GraspingPlane(origin=CENTER, normal=np.array([0.0, 1.0, 0.0]), epsilon=0.005)
    pa = ContactPoint(index=0, position=CENTER + [-0.05, 0.0, 0.0], normal=np.array([-1.0, 0.0, 0.0]))
    pb = ContactPoint(index=1, position=CENTER + [0.05, 0.0, 0.0], normal=np.array([1.0, 0.0, 0.0]))
    assert score_contact_pair(pa, pb, gripper, plane, ScoreWeights()) == 0.0


def test_score_is_zero_when_normals_miss_the_line(gripper):
    plane = GraspingPlane(origin=CENTER, normal=np.array([0.0, 1.0, 0.0]), epsilon=0.005)
    facing = np.array([0.0, 0.0, -1.0])
    pa = ContactPoint(index=0, position=CENTER + [-0.02, 0.0, 0.0], normal=facing)
    pb = ContactPoint(index=1, position=CENTER + [0.02, 0.0, 0.0], normal=facing)
    assert score_contact_pair(pa, pb, gripper, plane, ScoreWeights(), min_line_alignment=0.5) == 0.0
    assert score_contact_pair(pa, pb, gripper, plane, ScoreWeights()) == pytest.approx(0.5)


def test_score_contact_pair_needs_distinct_points(gripper):
    plane = GraspingPlane(origin=CENTER, normal=np.array([0.0, 1.0, 0.0]), epsilon=0.005)
    point = ContactPoint(index=3, position=CENTER, normal=np.array([1.0, 0.0, 0.0]))
    with pytest.raises(PreconditionViolation):
        score_contact_pair(point, point, gripper, plane, ScoreWeights())


def test_grasping_plane_passes_through_centroid_along_principal_axis():
    cloud = _noisy_cylinder(np.random.default_rng(0))
    plane = build_grasping_plane(cloud, 0.005)
    np.testing.assert_allclose(plane.origin, cloud.points.mean(axis=0))
    assert abs(plane.normal @ [0.0, 1.0, 0.0]) > 0.99


def test_grasping_plane_needs_positive_width():
    with pytest.raises(PreconditionViolation):
        build_grasping_plane(_noisy_cylinder(np.random.default_rng(0)), 0.0)


def test_slice_keeps_points_within_epsilon():
    cloud = _noisy_cylinder(np.random.default_rng(1))
    plane = build_grasping_plane(cloud, 0.005)

    selected = grasping_plane_slice(cloud, 0.005, plane)

    assert np.all(plane.distances(cloud.points[selected]) <= 0.005)
    outside = np.setdiff1d(np.arange(len(cloud)), selected)
    assert np.all(plane.distances(cloud.points[outside]) > 0.005)


def test_slice_needs_normals():
    with pytest.raises(MissingNormals):
        grasping_plane_slice(cylinder_surface(), 0.005)


def test_slice_far_from_cloud_is_empty():
    cloud = box_front_face()
    far = GraspingPlane(origin=np.array([5.0, 0.0, 0.0]), normal=np.array([1.0, 0.0, 0.0]), epsilon=0.005)
    with pytest.raises(EmptySlice):
        grasping_plane_slice(cloud, 0.005, far)


def test_split_sides_lie_on_either_side_of_the_median():
    cloud = _noisy_cylinder(np.random.default_rng(2))
    selected = grasping_plane_slice(cloud, 0.005)

    side_1, side_2 = split_opposing_regions(selected, cloud, np.array([0.0, 0.0, 1.0]))

    assert len(side_1) and len(side_2)
    assert not set(side_1) & set(side_2)
    assert set(side_1) | set(side_2) <= set(selected)
    assert cloud.points[side_1, 0].max() < cloud.points[side_2, 0].min() or \
        cloud.points[side_2, 0].max() < cloud.points[side_1, 0].min()


def test_split_falls_back_when_principal_axis_is_the_line_of_sight():
    # symmetric grid elongated along z: the first axis is exactly the view axis
    xs, ys, zs = np.meshgrid(np.array([-2, -1, 0, 1, 2]) * 0.01, np.array([-1, 1]) * 0.005, np.linspace(0.4, 0.6, 21))
    cloud = PointCloud(points=np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()]))

    side_1, side_2 = split_opposing_regions(np.arange(len(cloud)), cloud, np.array([0.0, 0.0, 1.0]))

    assert cloud.points[side_1, 0].max() < cloud.points[side_2, 0].min()


def test_split_of_a_flat_strip_is_one_sided():
    xs, zs = np.meshgrid(np.linspace(-0.1, 0.1, 41), np.linspace(0.5, 0.52, 5))
    points = np.column_stack([xs.ravel(), np.zeros(xs.size), zs.ravel()])
    cloud = PointCloud(points=points)
    with pytest.raises(OneSidedSlice):
        split_opposing_regions(np.arange(len(points)), cloud, np.array([0.0, 0.0, 1.0]))


def test_split_of_empty_slice():
    with pytest.raises(EmptySlice):
        split_opposing_regions(np.array([], dtype=int), box_front_face(), np.array([0.0, 0.0, 1.0]))


def test_best_grasp_on_cylinder_spans_the_diameter(gripper, config):
    rng = np.random.default_rng(42)
    for _ in range(20):
        axis = random_axis_off_view(rng, CENTER)
        cloud = estimate_normals(cylinder_surface(center=CENTER, axis=axis, noise=0.001, rng=rng), k=24)

        best = compute_best_grasp(cloud, gripper, config, WasteClass.DRINK_CAN).best

        assert 0.055 <= best.opening <= 0.065
        direction = (best.contact_b - best.contact_a) / best.opening
        assert abs(direction @ axis) <= np.sin(np.radians(15.0))


def test_report_ordering_and_bounds(gripper, config):
    cloud = _noisy_cylinder(np.random.default_rng(5))

    report = compute_best_grasp(cloud, gripper, config, WasteClass.DRINK_CAN)

    scores = [c.score for c in report.candidates]
    assert scores == sorted(scores, reverse=True)
    for candidate in report.candidates:
        assert candidate.index_a < candidate.index_b
        assert config.score_floor <= candidate.score <= 1.0
        assert gripper.min_opening <= candidate.opening <= gripper.max_opening
        assert np.linalg.norm(candidate.approach) == pytest.approx(1.0)
    assert report.point_count == len(cloud)
    assert report.object_class is WasteClass.DRINK_CAN


def test_report_payload_truncates_candidates(gripper, config):
    report = compute_best_grasp(_noisy_cylinder(np.random.default_rng(6)), gripper, config)
    payload = report.to_payload(top_k=3)
    assert len(payload["candidates"]) == min(3, len(report.candidates))
    assert payload["candidate_count"] == len(report.candidates)
    assert payload["object_class"] is None


def test_low_depth_validity_flags_report(gripper, config):
    report = compute_best_grasp(_noisy_cylinder(np.random.default_rng(7)), gripper, config)
    flagged = report.with_depth_validity(0.4, config.low_confidence_ratio)
    assert flagged.low_confidence and "low_confidence" in flagged.flags
    cleared = flagged.with_depth_validity(0.9, config.low_confidence_ratio)
    assert not cleared.low_confidence and cleared.flags == ()


def test_flat_face_has_no_antipodal_pair(gripper, config):
    with pytest.raises(NoFeasibleGrasp):
        compute_best_grasp(box_front_face(), gripper, config)


def test_small_cloud_is_insufficient(gripper, config):
    cloud = _noisy_cylinder(np.random.default_rng(8)).select(np.arange(50))
    with pytest.raises(InsufficientCloud):
        compute_best_grasp(cloud, gripper, config)


def test_grasp_needs_normals(gripper, config):
    with pytest.raises(MissingNormals):
        compute_best_grasp(cylinder_surface(), gripper, config)


def test_best_grasp_is_equivariant_under_rigid_motion(gripper, config):
    rng = np.random.default_rng(9)
    cloud = _noisy_cylinder(rng, axis=(1.0, 0.2, 0.1))
    original = compute_best_grasp(cloud, gripper, config)
    for _ in range(50):
        rotation, translation = random_rotation(rng), rng.uniform(-1.0, 1.0, size=3)

        moved = compute_best_grasp(cloud.transformed(rotation, translation), gripper, config)

        assert moved.best.score == pytest.approx(original.best.score, abs=1e-9)
        if _no_near_tie(original):
            assert (moved.best.index_a, moved.best.index_b) == (original.best.index_a, original.best.index_b)
            np.testing.assert_allclose(moved.best.contact_a, rotation @ original.best.contact_a + translation, atol=1e-9)
            assert moved.best.opening == pytest.approx(original.best.opening, abs=1e-9)

        assert len(moved.candidates) == len(original.candidates)
        np.testing.assert_allclose(
            [c.score for c in moved.candidates], [c.score for c in original.candidates], atol=1e-9,
        )
        for rank in _separated_ranks(original):
            expected, actual = original.candidates[rank], moved.candidates[rank]
            assert (actual.index_a, actual.index_b) == (expected.index_a, expected.index_b)
            np.testing.assert_allclose(actual.contact_a, rotation @ expected.contact_a + translation, atol=1e-6)
            np.testing.assert_allclose(actual.contact_b, rotation @ expected.contact_b + translation, atol=1e-6)


def test_best_grasp_scales_with_the_scene(config):
    cloud = _noisy_cylinder(np.random.default_rng(10))
    scaled = PointCloud(points=2.0 * cloud.points, normals=cloud.normals, curvature=cloud.curvature)
    scaled_config = config.model_copy(update={"slice_epsilon": 2.0 * config.slice_epsilon})

    base = compute_best_grasp(cloud, GripperSpec(), config)
    doubled = compute_best_grasp(scaled, GripperSpec(max_opening=0.16, finger_width=0.04), scaled_config)

    assert doubled.best.score == pytest.approx(base.best.score, abs=1e-9)
    if _no_near_tie(base):
        assert (doubled.best.index_a, doubled.best.index_b) == (base.best.index_a, base.best.index_b)
        assert doubled.best.opening == pytest.approx(2.0 * base.best.opening)


def test_principal_axis_of_cylinder_is_its_axis():
    axes = centroid_and_principal_axes(_noisy_cylinder(np.random.default_rng(11), axis=(1.0, 0.0, 0.0)))
    assert axes.axes[0][0] > 0.99
