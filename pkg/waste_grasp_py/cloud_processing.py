"""Point-cloud conditioning between reconstruction and grasping.

Every function here returns a new cloud; clouds are immutable once built and
all orderings are deterministic (ties break on point index).
"""
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from waste_grasp_py.constants import EIGEN_GAP_TOLERANCE, NORMAL_UNIT_TOLERANCE
from waste_grasp_py.exceptions import (
    DegenerateCloud,
    EmptyCloud,
    LengthMismatch,
    PreconditionViolation,
    TooFewPoints,
)


def _frozen(array: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if array is not None:
        array.setflags(write=False)
    return array


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None
    curvature: Optional[np.ndarray] = None
    viewpoint: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64).reshape(-1, 3)
        n = len(points)
        colors = normals = curvature = None
        if self.colors is not None:
            colors = np.array(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(colors) != n:
                raise LengthMismatch(f"{len(colors)} colors for {n} points")
        if self.normals is not None:
            normals = np.array(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != n:
                raise LengthMismatch(f"{len(normals)} normals for {n} points")
            if n and np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > NORMAL_UNIT_TOLERANCE:
                raise PreconditionViolation("Normals must be unit length")
        if self.curvature is not None:
            curvature = np.array(self.curvature, dtype=np.float64).reshape(-1)
            if len(curvature) != n:
                raise LengthMismatch(f"{len(curvature)} curvature values for {n} points")
        viewpoint = np.array(self.viewpoint, dtype=np.float64).reshape(3)

        object.__setattr__(self, "points", _frozen(points))
        object.__setattr__(self, "colors", _frozen(colors))
        object.__setattr__(self, "normals", _frozen(normals))
        object.__setattr__(self, "curvature", _frozen(curvature))
        object.__setattr__(self, "viewpoint", _frozen(viewpoint))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def select(self, indices) -> "PointCloud":
        indices = np.asarray(indices, dtype=np.int64)
        return PointCloud(
            points=self.points[indices],
            colors=None if self.colors is None else self.colors[indices],
            normals=None if self.normals is None else self.normals[indices],
            curvature=None if self.curvature is None else self.curvature[indices],
            viewpoint=self.viewpoint,
        )

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        """Applies p -> R p + t to points and viewpoint, and R to normals."""
        rotation = np.asarray(rotation, dtype=np.float64)
        translation = np.asarray(translation, dtype=np.float64)
        normals = None
        if self.normals is not None:
            normals = self.normals @ rotation.T
            normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        return PointCloud(
            points=self.points @ rotation.T + translation,
            colors=self.colors,
            normals=normals,
            curvature=self.curvature,
            viewpoint=rotation @ self.viewpoint + translation,
        )

    def bounding_box(self) -> Tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            raise EmptyCloud("Empty cloud has no bounding box")
        return self.points.min(axis=0), self.points.max(axis=0)


class SpatialIndex:
    """k-d tree over a cloud's points with results identical to a linear scan."""

    def __init__(self, points: np.ndarray):
        self._points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self._tree = cKDTree(self._points)

    @property
    def size(self) -> int:
        return len(self._points)

    def knn(self, queries: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (distances, indices), each (Q, k), ordered by distance then index."""
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if k < 1:
            raise PreconditionViolation(f"k must be at least 1, got {k}")
        if k > self.size:
            raise TooFewPoints(f"Requested {k} neighbors from {self.size} points")

        fetch = min(k + 1, self.size)
        dist, idx = self._tree.query(queries, k=fetch)
        dist = np.asarray(dist).reshape(len(queries), fetch)
        idx = np.asarray(idx).reshape(len(queries), fetch)
        order = np.lexsort((idx, dist), axis=-1)
        dist = np.take_along_axis(dist, order, axis=-1)
        idx = np.take_along_axis(idx, order, axis=-1)

        if fetch > k:
            # equal distances straddling the k-th slot: the tree's pick is arbitrary
            for row in np.flatnonzero(dist[:, k - 1] == dist[:, k]):
                all_dist = np.linalg.norm(self._points - queries[row], axis=1)
                best = np.lexsort((np.arange(self.size), all_dist))[:fetch]
                dist[row], idx[row] = all_dist[best], best
        return dist[:, :k], idx[:, :k]

    def radius(self, query: np.ndarray, r: float) -> np.ndarray:
        found = self._tree.query_ball_point(np.asarray(query, dtype=np.float64), r)
        return np.array(sorted(found), dtype=np.int64)


class PrincipalAxes(NamedTuple):
    centroid: np.ndarray
    axes: np.ndarray  # rows, eigenvalues descending
    eigenvalues: np.ndarray


def voxel_downsample(c: PointCloud, voxel: float) -> PointCloud:
    if not voxel > 0:
        raise PreconditionViolation(f"Voxel size must be positive, got {voxel}")
    if len(c) == 0:
        raise EmptyCloud("Cannot downsample an empty cloud")

    keys = np.floor(c.points / voxel).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    occupied = int(inverse.max()) + 1
    counts = np.bincount(inverse, minlength=occupied).astype(np.float64)

    def _mean(values: np.ndarray) -> np.ndarray:
        return np.column_stack([
            np.bincount(inverse, weights=values[:, j], minlength=occupied) for j in range(values.shape[1])
        ]) / counts[:, None]

    colors = None
    if c.colors is not None:
        colors = np.clip(np.rint(_mean(c.colors.astype(np.float64))), 0, 255).astype(np.uint8)
    return PointCloud(points=_mean(c.points), colors=colors, viewpoint=c.viewpoint)


def mean_neighbor_distances(c: PointCloud, k: int, index: Optional[SpatialIndex] = None) -> np.ndarray:
    index = index or SpatialIndex(c.points)
    dist, _ = index.knn(c.points, k + 1)
    # first column is the point itself (or a coincident duplicate), both at distance 0
    return dist[:, 1:].mean(axis=1)


def remove_statistical_outliers(c: PointCloud, k: int, sigma: float) -> PointCloud:
    if k < 1 or not sigma > 0:
        raise PreconditionViolation(f"Outlier removal needs k >= 1 and sigma > 0, got k={k}, sigma={sigma}")
    if len(c) <= k:
        raise TooFewPoints(f"Outlier removal with k={k} needs more than {k} points, got {len(c)}")

    mean_dist = mean_neighbor_distances(c, k)
    threshold = mean_dist.mean() + sigma * mean_dist.std()
    return c.select(np.flatnonzero(mean_dist <= threshold))


def estimate_normals(c: PointCloud, k: int, index: Optional[SpatialIndex] = None) -> PointCloud:
    """Local PCA normals over the k nearest neighbors (the point included), oriented toward the viewpoint.

    Also stores per-point surface variation (smallest eigenvalue over the
    eigenvalue sum) as ``curvature``.
    """
    if k < 3:
        raise TooFewPoints(f"Normal estimation needs k >= 3, got {k}")
    if len(c) <= k:
        raise TooFewPoints(f"Normal estimation with k={k} needs more than {k} points, got {len(c)}")

    index = index or SpatialIndex(c.points)
    _, neighbors = index.knn(c.points, k)
    patches = c.points[neighbors]
    centered = patches - patches.mean(axis=1, keepdims=True)
    covariances = np.einsum("nki,nkj->nij", centered, centered) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariances)

    normals = eigenvectors[:, :, 0].copy()
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    facing_away = np.einsum("ni,ni->n", normals, c.viewpoint - c.points) < 0
    normals[facing_away] *= -1.0

    eigenvalues = np.clip(eigenvalues, 0.0, None)
    totals = eigenvalues.sum(axis=1)
    curvature = np.divide(eigenvalues[:, 0], totals, out=np.zeros_like(totals), where=totals > 0)
    return PointCloud(points=c.points, colors=c.colors, normals=normals, curvature=curvature, viewpoint=c.viewpoint)


def _null_vector(m: np.ndarray) -> np.ndarray:
    candidates = (np.cross(m[0], m[1]), np.cross(m[0], m[2]), np.cross(m[1], m[2]))
    best = max(candidates, key=lambda v: float(v @ v))
    return best / math.sqrt(float(best @ best))


def _jacobi_eigen(a: np.ndarray, max_sweeps: int = 50) -> Tuple[np.ndarray, np.ndarray]:
    a = a.copy()
    v = np.eye(3)
    norm = float(np.sum(a * a))
    for _ in range(max_sweeps):
        off = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
        if off <= (np.finfo(float).eps ** 2) * norm:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            if a[p, q] == 0.0:
                continue
            theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
            t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            cos = 1.0 / math.sqrt(t * t + 1.0)
            sin = t * cos
            rotation = np.eye(3)
            rotation[p, p] = rotation[q, q] = cos
            rotation[p, q] = sin
            rotation[q, p] = -sin
            a = rotation.T @ a @ rotation
            v = v @ rotation
    return np.diag(a).copy(), v


def symmetric_eigen_3x3(matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a real symmetric 3x3 matrix: (values descending, vectors as columns).

    Uses the trigonometric closed form; falls back to cyclic Jacobi when two
    eigenvalues are closer than EIGEN_GAP_TOLERANCE relative to the largest
    magnitude. Eigenvectors built from cross products of rows of (A - lambda I)
    carry an error of order eps / gap**2, Jacobi only eps / gap.
    """
    a = np.asarray(matrix, dtype=np.float64)
    a = (a + a.T) / 2.0
    if not np.any(a):
        return np.zeros(3), np.eye(3)

    p1 = a[0, 1] ** 2 + a[0, 2] ** 2 + a[1, 2] ** 2
    if p1 == 0.0:
        values, vectors = np.diag(a).copy(), np.eye(3)
    else:
        q = np.trace(a) / 3.0
        p2 = (a[0, 0] - q) ** 2 + (a[1, 1] - q) ** 2 + (a[2, 2] - q) ** 2 + 2.0 * p1
        p = math.sqrt(p2 / 6.0)
        b = (a - q * np.eye(3)) / p
        r = min(1.0, max(-1.0, np.linalg.det(b) / 2.0))
        phi = math.acos(r) / 3.0
        largest = q + 2.0 * p * math.cos(phi)
        smallest = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
        middle = 3.0 * q - largest - smallest

        magnitude = max(abs(largest), abs(smallest))
        gap = min(largest - middle, middle - smallest)
        if gap < EIGEN_GAP_TOLERANCE * magnitude:
            values, vectors = _jacobi_eigen(a)
        else:
            v_large = _null_vector(a - largest * np.eye(3))
            v_small = _null_vector(a - smallest * np.eye(3))
            v_small -= (v_small @ v_large) * v_large
            v_small /= np.linalg.norm(v_small)
            v_mid = np.cross(v_small, v_large)
            values = np.array([largest, middle, smallest])
            vectors = np.column_stack([v_large, v_mid, v_small])

    order = np.argsort(-values, kind="stable")
    return values[order], vectors[:, order]


def _canonical_sign(axis: np.ndarray) -> np.ndarray:
    # np.argmax keeps the first of equal magnitudes
    return -axis if axis[int(np.argmax(np.abs(axis)))] < 0 else axis


def centroid_and_principal_axes(c: PointCloud) -> PrincipalAxes:
    if len(c) < 3:
        raise DegenerateCloud(f"Principal axes need at least 3 points, got {len(c)}")
    centroid = c.points.mean(axis=0)
    centered = c.points - centroid
    covariance = centered.T @ centered / len(c)

    values, vectors = symmetric_eigen_3x3(covariance)
    resolution = np.finfo(float).eps * max(1.0, float(np.max(np.abs(centroid))))
    if values[0] <= 16.0 * resolution ** 2:
        raise DegenerateCloud("All points coincide; covariance has rank 0")

    first = _canonical_sign(vectors[:, 0])
    second = _canonical_sign(vectors[:, 1])
    third = np.cross(first, second)
    return PrincipalAxes(centroid=centroid, axes=np.vstack([first, second, third]), eigenvalues=values)
