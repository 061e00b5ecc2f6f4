"""Two-finger contact-pair synthesis on a single-view object cloud.

The procedure cuts the cloud with a plane through its centroid whose normal is
the first principal axis, keeps a slab of half-width ``epsilon`` around that
plane, splits the slab into two lateral sides relative to the view axis and
scores every cross pair of contacts by antipodality, local flatness and
proximity to the cutting plane.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from waste_grasp_py.cloud_processing import (
    PointCloud,
    PrincipalAxes,
    SpatialIndex,
    centroid_and_principal_axes,
)
from waste_grasp_py.config_models import GraspConfig, GripperSpec, ScoreWeights
from waste_grasp_py.enums import WasteClass
from waste_grasp_py.exceptions import (
    DegenerateCloud,
    EmptySlice,
    InsufficientCloud,
    MissingNormals,
    NoFeasibleGrasp,
    OneSidedSlice,
    PreconditionViolation,
)
from waste_grasp_py.models import GraspCandidatePayload, GraspReportPayload

logger = logging.getLogger(__name__)

_AXIS_PARALLEL_TOLERANCE = 1e-9


@dataclass(frozen=True)
class GraspingPlane:
    origin: np.ndarray
    normal: np.ndarray
    epsilon: float

    def distances(self, points: np.ndarray) -> np.ndarray:
        return np.abs((np.asarray(points) - self.origin) @ self.normal)


@dataclass(frozen=True)
class ContactPoint:
    index: int
    position: np.ndarray
    normal: np.ndarray
    curvature: float = 0.0


@dataclass(frozen=True)
class GraspCandidate:
    index_a: int
    index_b: int
    contact_a: np.ndarray
    contact_b: np.ndarray
    normal_a: np.ndarray
    normal_b: np.ndarray
    score: float
    opening: float
    approach: np.ndarray

    def to_payload(self) -> GraspCandidatePayload:
        return GraspCandidatePayload(
            index_a=self.index_a,
            index_b=self.index_b,
            contact_a=self.contact_a.tolist(),
            contact_b=self.contact_b.tolist(),
            normal_a=self.normal_a.tolist(),
            normal_b=self.normal_b.tolist(),
            score=self.score,
            opening=self.opening,
            approach=self.approach.tolist(),
        )


@dataclass(frozen=True)
class GraspReport:
    candidates: Tuple[GraspCandidate, ...]
    plane: GraspingPlane
    point_count: int
    object_class: Optional[WasteClass] = None
    depth_validity_ratio: Optional[float] = None
    low_confidence: bool = False
    flags: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def best(self) -> GraspCandidate:
        return self.candidates[0]

    def with_depth_validity(self, ratio: float, low_confidence_ratio: float) -> "GraspReport":
        low = ratio < low_confidence_ratio
        flags = tuple(f for f in self.flags if f != "low_confidence") + (("low_confidence",) if low else ())
        return replace(self, depth_validity_ratio=ratio, low_confidence=low, flags=flags)

    def to_payload(self, top_k: Optional[int] = None) -> GraspReportPayload:
        candidates = self.candidates if top_k is None else self.candidates[:top_k]
        return GraspReportPayload(
            object_class=self.object_class.label if self.object_class is not None else None,
            point_count=self.point_count,
            depth_validity_ratio=self.depth_validity_ratio,
            low_confidence=self.low_confidence,
            flags=list(self.flags),
            candidate_count=len(self.candidates),
            candidates=[c.to_payload() for c in candidates],
        )


def _unit(vector: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise DegenerateCloud("Cannot normalize a zero-length direction")
    return np.asarray(vector, dtype=np.float64) / norm


def build_grasping_plane(c: PointCloud, epsilon: float, axes: Optional[PrincipalAxes] = None) -> GraspingPlane:
    if not epsilon > 0:
        raise PreconditionViolation(f"Slice half-width must be positive, got {epsilon}")
    axes = axes or centroid_and_principal_axes(c)
    return GraspingPlane(origin=axes.centroid, normal=axes.axes[0], epsilon=float(epsilon))


def grasping_plane_slice(c: PointCloud, epsilon: float, plane: Optional[GraspingPlane] = None) -> np.ndarray:
    if not c.has_normals:
        raise MissingNormals("Grasping-plane slicing needs a cloud with normals")
    plane = plane or build_grasping_plane(c, epsilon)
    selected = np.flatnonzero(plane.distances(c.points) <= epsilon)
    if len(selected) == 0:
        raise EmptySlice(f"No point lies within {epsilon} m of the grasping plane")
    return selected


def split_opposing_regions(
    slice_indices: np.ndarray,
    c: PointCloud,
    view_axis: np.ndarray,
    axes: Optional[PrincipalAxes] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    slice_indices = np.asarray(slice_indices, dtype=np.int64)
    if len(slice_indices) == 0:
        raise EmptySlice("Cannot split an empty slice")
    axes = axes or centroid_and_principal_axes(c)

    lateral = np.cross(_unit(view_axis), axes.axes[0])
    if np.linalg.norm(lateral) < _AXIS_PARALLEL_TOLERANCE:
        # principal axis along the line of sight
        lateral = axes.axes[1]
    lateral = _unit(lateral)

    projections = c.points[slice_indices] @ lateral
    median = np.median(projections)
    side_1 = slice_indices[projections < median]
    side_2 = slice_indices[projections > median]
    if len(side_1) == 0 or len(side_2) == 0:
        raise OneSidedSlice(
            f"Slice of {len(slice_indices)} points does not span both lateral sides; "
            "the visible surface is too thin to grasp"
        )
    return side_1, side_2


def antipodality(normal_a: np.ndarray, normal_b: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Opposition of the two normals averaged with their alignment to the contact line."""
    cos_opposed = np.clip(np.sum(normal_a * -normal_b, axis=-1), -1.0, 1.0)
    opposition = 1.0 - np.arccos(cos_opposed) / np.pi
    alignment = (np.abs(np.sum(normal_a * direction, axis=-1)) + np.abs(np.sum(normal_b * direction, axis=-1))) / 2.0
    return (opposition + alignment) / 2.0


def _score_pairs(
    pos_a: np.ndarray, nrm_a: np.ndarray, curv_a: np.ndarray,
    pos_b: np.ndarray, nrm_b: np.ndarray, curv_b: np.ndarray,
    gripper: GripperSpec,
    plane: GraspingPlane,
    weights: ScoreWeights,
    min_line_alignment: float,
) -> Tuple[np.ndarray, np.ndarray]:
    line = pos_b - pos_a
    opening = np.linalg.norm(line, axis=-1)
    direction = line / np.where(opening > 0, opening, 1.0)[..., None]

    antipodal = antipodality(nrm_a, nrm_b, direction)
    flatness = np.clip(1.0 - 3.0 * (curv_a + curv_b) / 2.0, 0.0, 1.0)
    offsets = (np.abs((pos_a - plane.origin) @ plane.normal) + np.abs((pos_b - plane.origin) @ plane.normal)) / 2.0
    proximity = np.clip(1.0 - offsets / plane.epsilon, 0.0, 1.0)

    score = np.clip(
        weights.antipodality * antipodal + weights.flatness * flatness + weights.plane_proximity * proximity,
        0.0, 1.0,
    )
    worst_alignment = np.minimum(
        np.abs(np.sum(nrm_a * direction, axis=-1)), np.abs(np.sum(nrm_b * direction, axis=-1))
    )
    feasible = (
        (opening > 0)
        & (opening >= gripper.min_opening)
        & (opening <= gripper.max_opening)
        & (worst_alignment >= min_line_alignment)
    )
    return np.where(feasible, score, 0.0), opening


def score_contact_pair(
    pa: ContactPoint,
    pb: ContactPoint,
    g: GripperSpec,
    plane: GraspingPlane,
    weights: ScoreWeights,
    min_line_alignment: float = 0.0,
) -> float:
    if pa.index == pb.index:
        raise PreconditionViolation("A contact pair needs two distinct points")
    score, _ = _score_pairs(
        np.asarray(pa.position), np.asarray(pa.normal), np.asarray(pa.curvature),
        np.asarray(pb.position), np.asarray(pb.normal), np.asarray(pb.curvature),
        g, plane, weights, min_line_alignment,
    )
    return float(score)


def contact_curvature(c: PointCloud, index: SpatialIndex, indices: np.ndarray, patch_radius: float) -> np.ndarray:
    """Surface variation over the finger footprint around each contact.

    Falls back to the cloud's k-neighborhood value when fewer than three
    points lie inside the footprint.
    """
    values = np.zeros(len(indices))
    for slot, point_index in enumerate(indices):
        patch = index.radius(c.points[point_index], patch_radius)
        if len(patch) >= 3:
            centered = c.points[patch] - c.points[patch].mean(axis=0)
            eigenvalues = np.clip(np.linalg.eigvalsh(centered.T @ centered / len(patch)), 0.0, None)
            total = eigenvalues.sum()
            values[slot] = eigenvalues[0] / total if total > 0 else 0.0
        elif c.curvature is not None:
            values[slot] = c.curvature[point_index]
    return values


def _cap_side(side: np.ndarray, plane: GraspingPlane, points: np.ndarray, cap: int) -> np.ndarray:
    distances = plane.distances(points[side])
    order = np.lexsort((side, distances))
    return side[order[:cap]]


def compute_best_grasp(
    c: PointCloud,
    g: GripperSpec,
    config: GraspConfig,
    object_class: Optional[WasteClass] = None,
) -> GraspReport:
    if len(c) < config.min_points:
        raise InsufficientCloud(
            f"Cloud has {len(c)} points, at least {config.min_points} are needed to compute a reliable grasp"
        )
    if not c.has_normals:
        raise MissingNormals("Grasp synthesis needs a cloud with normals")

    axes = centroid_and_principal_axes(c)
    plane = build_grasping_plane(c, config.slice_epsilon, axes)
    slice_indices = grasping_plane_slice(c, config.slice_epsilon, plane)
    view_axis = _unit(axes.centroid - c.viewpoint)
    side_1, side_2 = split_opposing_regions(slice_indices, c, view_axis, axes)
    side_1 = _cap_side(side_1, plane, c.points, config.side_cap)
    side_2 = _cap_side(side_2, plane, c.points, config.side_cap)
    logger.debug("slice=%d side_1=%d side_2=%d", len(slice_indices), len(side_1), len(side_2))

    index = SpatialIndex(c.points)
    curvature = c.curvature if c.curvature is not None else np.zeros(len(c))
    footprint = np.union1d(side_1, side_2)
    curvature = curvature.copy()
    curvature[footprint] = contact_curvature(c, index, footprint, g.finger_width / 2.0)

    a, b = side_1[:, None], side_2[None, :]
    scores, openings = _score_pairs(
        c.points[a], c.normals[a], curvature[a],
        c.points[b], c.normals[b], curvature[b],
        g, plane, config.weights, config.min_line_alignment,
    )
    feasible = (openings >= g.min_opening) & (openings <= g.max_opening) & (openings > 0)
    rows, cols = np.nonzero(feasible & (scores > 0) & (scores >= config.score_floor))
    if len(rows) == 0:
        raise NoFeasibleGrasp(
            f"None of {len(side_1) * len(side_2)} contact pairs reaches the score floor {config.score_floor} "
            f"within openings [{g.min_opening}, {g.max_opening}] m"
        )

    first = np.minimum(side_1[rows], side_2[cols])
    second = np.maximum(side_1[rows], side_2[cols])
    pair_scores = scores[rows, cols]
    order = np.lexsort((second, first, -pair_scores))

    candidates = []
    for slot in order:
        i, j = int(first[slot]), int(second[slot])
        midpoint = (c.points[i] + c.points[j]) / 2.0
        candidates.append(GraspCandidate(
            index_a=i,
            index_b=j,
            contact_a=c.points[i].copy(),
            contact_b=c.points[j].copy(),
            normal_a=c.normals[i].copy(),
            normal_b=c.normals[j].copy(),
            score=float(pair_scores[slot]),
            opening=float(openings[rows[slot], cols[slot]]),
            approach=_unit(midpoint - c.viewpoint),
        ))
    logger.debug("feasible candidates=%d best score=%.4f", len(candidates), candidates[0].score)
    return GraspReport(
        candidates=tuple(candidates),
        plane=plane,
        point_count=len(c),
        object_class=object_class,
    )
