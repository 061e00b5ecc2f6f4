"""Analytic fixtures shared by the test modules: cylinders, box faces, rendered RGBD frames, random masks."""
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from waste_grasp_py.camera_geometry import ColorFrame, DepthFrame, InstanceMask, PinholeIntrinsics
from waste_grasp_py.cloud_processing import PointCloud

# fine depth quantization keeps rendered surfaces smooth
RENDER_DEPTH_SCALE = 0.0001

INTRINSICS = PinholeIntrinsics(fx=600.0, fy=600.0, cx=320.0, cy=240.0, width=640, height=480, depth_scale=RENDER_DEPTH_SCALE)


def orthonormal_frame(axis) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    helper = np.eye(3)[int(np.argmin(np.abs(axis)))]
    first = np.cross(axis, helper)
    first /= np.linalg.norm(first)
    return axis, first, np.cross(axis, first)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


def random_axis_off_view(rng: np.random.Generator, view, min_angle_deg: float = 60.0) -> np.ndarray:
    """Random unit axis at least ``min_angle_deg`` away from the view direction."""
    view = np.asarray(view, dtype=np.float64) / np.linalg.norm(view)
    limit = np.cos(np.radians(min_angle_deg))
    while True:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        if abs(axis @ view) <= limit:
            return axis


def cylinder_surface(
    radius: float = 0.03,
    height: float = 0.12,
    spacing: float = 0.003,
    center=(0.0, 0.0, 0.5),
    axis=(0.0, 1.0, 0.0),
    viewpoint=(0.0, 0.0, 0.0),
    noise: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> PointCloud:
    """Side surface of a cylinder sampled on a regular grid, keeping only the half that faces the viewpoint."""
    center = np.asarray(center, dtype=np.float64)
    viewpoint = np.asarray(viewpoint, dtype=np.float64)
    axis, e1, e2 = orthonormal_frame(axis)
    angles = np.arange(0.0, 2.0 * np.pi, spacing / radius)
    heights = np.arange(-height / 2.0, height / 2.0 + 1e-12, spacing)
    phi, h = np.meshgrid(angles, heights)
    radial = np.cos(phi.ravel())[:, None] * e1 + np.sin(phi.ravel())[:, None] * e2
    points = center + radius * radial + h.ravel()[:, None] * axis
    visible = np.einsum("ni,ni->n", radial, viewpoint - points) > 0
    points = points[visible]
    if noise > 0:
        points = points + (rng or np.random.default_rng(0)).normal(scale=noise, size=points.shape)
    return PointCloud(points=points, viewpoint=viewpoint)


def box_front_face(width: float = 0.2, height: float = 0.1, distance: float = 0.5, spacing: float = 0.004) -> PointCloud:
    """The camera-facing face of a box, with analytic normals toward the camera."""
    xs = np.arange(-width / 2.0, width / 2.0 + 1e-12, spacing)
    ys = np.arange(-height / 2.0, height / 2.0 + 1e-12, spacing)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, distance)])
    normals = np.tile([0.0, 0.0, -1.0], (len(points), 1))
    return PointCloud(points=points, normals=normals, curvature=np.zeros(len(points)))


class RenderedCylinder(NamedTuple):
    center_x: float
    center_z: float
    radius: float = 0.03
    height: float = 0.12


def render_cylinders(
    cylinders: Sequence[RenderedCylinder],
    intrinsics: PinholeIntrinsics = INTRINSICS,
) -> Tuple[DepthFrame, ColorFrame, List[InstanceMask]]:
    """Ray-casts upright (image-vertical) cylinders into a depth frame; background depth is 0."""
    height, width = intrinsics.shape
    vs, us = np.indices((height, width), dtype=np.float64)
    rx = (us - intrinsics.cx) / intrinsics.fx
    ry = (vs - intrinsics.cy) / intrinsics.fy

    depth = np.full((height, width), np.inf)
    owner = np.full((height, width), -1)
    for label, cyl in enumerate(cylinders):
        # ray (rx t, ry t, t) against (x - cx)^2 + (z - cz)^2 = r^2
        a = rx ** 2 + 1.0
        b = -2.0 * (rx * cyl.center_x + cyl.center_z)
        c = cyl.center_x ** 2 + cyl.center_z ** 2 - cyl.radius ** 2
        disc = b ** 2 - 4.0 * a * c
        hit = disc >= 0
        t = np.where(hit, (-b - np.sqrt(np.where(hit, disc, 0.0))) / (2.0 * a), np.inf)
        hit &= np.abs(ry * t) <= cyl.height / 2.0
        closer = hit & (t < depth)
        depth[closer] = t[closer]
        owner[closer] = label

    samples = np.where(np.isfinite(depth), np.rint(depth / intrinsics.depth_scale), 0).astype(np.uint16)
    colors = np.zeros((height, width, 3), dtype=np.uint8)
    colors[owner >= 0] = (180, 40, 40)
    masks = [InstanceMask.from_array(owner == label) for label in range(len(cylinders))]
    return (
        DepthFrame.from_array(samples, depth_scale=intrinsics.depth_scale),
        ColorFrame.from_array(colors),
        masks,
    )


def random_mask(rng: np.random.Generator, width: int = 64, height: int = 64) -> InstanceMask:
    """A nonempty union of one to three random rectangles."""
    bits = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        u0, u1 = np.sort(rng.integers(0, width, size=2))
        v0, v1 = np.sort(rng.integers(0, height, size=2))
        bits[v0:v1 + 1, u0:u1 + 1] = True
    return InstanceMask.from_array(bits)


def jitter_mask(rng: np.random.Generator, mask: InstanceMask, flips: int = 40) -> InstanceMask:
    """Copy of ``mask`` with random pixels toggled, kept nonempty."""
    bits = mask.bits.copy()
    rows = rng.integers(0, mask.height, size=flips)
    cols = rng.integers(0, mask.width, size=flips)
    bits[rows, cols] ^= True
    if not bits.any():
        bits[rows[0], cols[0]] = True
    return InstanceMask.from_array(bits)
