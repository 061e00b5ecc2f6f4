"""Pinhole projection, back-projection and masked depth-to-cloud reconstruction.

Camera frame convention: x right, y down, z forward. Depth samples are 16-bit
unsigned integers scaled by ``depth_scale`` meters per unit; a zero sample
means "no measurement". Color and depth are assumed to be registered into the
same pixel grid.
"""
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, ConfigDict, model_validator

from waste_grasp_py.cloud_processing import PointCloud
from waste_grasp_py.constants import DEFAULT_DEPTH_SCALE, DEFAULT_IMAGE_HEIGHT, DEFAULT_IMAGE_WIDTH
from waste_grasp_py.exceptions import (
    DimensionMismatch,
    EmptyCloud,
    EmptyMask,
    InvalidDepth,
    OutOfBounds,
    PreconditionViolation,
)

DepthRange = Tuple[float, float]
DEFAULT_DEPTH_RANGE: DepthRange = (0.15, 3.0)


class PinholeIntrinsics(BaseModel):
    fx: float = Field(..., gt=0)
    fy: float = Field(..., gt=0)
    cx: float
    cy: float
    width: int = Field(DEFAULT_IMAGE_WIDTH, gt=0)
    height: int = Field(DEFAULT_IMAGE_HEIGHT, gt=0)
    # carried by the sidecar; consumed when decoding the depth PNG
    depth_scale: float = Field(DEFAULT_DEPTH_SCALE, gt=0)

    model_config = ConfigDict(extra="ignore", frozen=True)

    @model_validator(mode="after")
    def _check_principal_point(self) -> "PinholeIntrinsics":
        if not 0 <= self.cx < self.width:
            raise ValueError(f"cx must lie in [0, width), got {self.cx} for width {self.width}")
        if not 0 <= self.cy < self.height:
            raise ValueError(f"cy must lie in [0, height), got {self.cy} for height {self.height}")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width


def _as_grid(data, width: int, height: int, dtype, channels: int = 1, name: str = "data") -> np.ndarray:
    array = np.asarray(data)
    expected = width * height * channels
    if array.size != expected:
        raise DimensionMismatch(
            f"{name} holds {array.size} samples, expected {expected} for {width}x{height}"
            + (f"x{channels}" if channels > 1 else "")
        )
    shape = (height, width) if channels == 1 else (height, width, channels)
    grid = np.ascontiguousarray(array.reshape(shape), dtype=dtype)
    grid.setflags(write=False)
    return grid


@dataclass(frozen=True)
class DepthFrame:
    width: int
    height: int
    data: np.ndarray
    depth_scale: float = DEFAULT_DEPTH_SCALE

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise DimensionMismatch(f"Depth frame dimensions must be positive, got {self.width}x{self.height}")
        if not self.depth_scale > 0:
            raise PreconditionViolation(f"depth_scale must be positive, got {self.depth_scale}")
        raw = np.asarray(self.data)
        if raw.size and (raw.min() < 0 or raw.max() > np.iinfo(np.uint16).max):
            raise PreconditionViolation("Depth samples must fit in 16 unsigned bits")
        object.__setattr__(self, "data", _as_grid(raw, self.width, self.height, np.uint16, name="depth"))

    @classmethod
    def from_array(cls, samples: np.ndarray, depth_scale: float = DEFAULT_DEPTH_SCALE) -> "DepthFrame":
        height, width = np.shape(samples)
        return cls(width=width, height=height, data=samples, depth_scale=depth_scale)

    def meters(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.depth_scale


@dataclass(frozen=True)
class ColorFrame:
    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_grid(self.data, self.width, self.height, np.uint8, channels=3, name="color"))

    @classmethod
    def from_array(cls, pixels: np.ndarray) -> "ColorFrame":
        height, width = np.shape(pixels)[:2]
        return cls(width=width, height=height, data=pixels)


@dataclass(frozen=True)
class InstanceMask:
    width: int
    height: int
    bits: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "bits", _as_grid(np.asarray(self.bits) != 0, self.width, self.height, bool, name="mask"))

    @classmethod
    def from_array(cls, bits: np.ndarray) -> "InstanceMask":
        height, width = np.shape(bits)
        return cls(width=width, height=height, bits=bits)

    @classmethod
    def empty(cls, width: int, height: int) -> "InstanceMask":
        return cls(width=width, height=height, bits=np.zeros((height, width), dtype=bool))

    def complement(self) -> "InstanceMask":
        return InstanceMask(width=self.width, height=self.height, bits=~self.bits)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InstanceMask):
            return NotImplemented
        return self.width == other.width and self.height == other.height and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self) -> int:
        return hash((self.width, self.height, np.packbits(self.bits).tobytes()))


def _check_range(depth_range: DepthRange) -> DepthRange:
    z_min, z_max = depth_range
    if not z_min < z_max:
        raise PreconditionViolation(f"Depth range must satisfy z_min < z_max, got {depth_range}")
    return float(z_min), float(z_max)


def backproject_pixel(u: float, v: float, z: float, k: PinholeIntrinsics) -> np.ndarray:
    if not z > 0:
        raise InvalidDepth(f"Depth must be positive, got {z}")
    if not (0 <= u < k.width and 0 <= v < k.height):
        raise OutOfBounds(f"Pixel ({u}, {v}) lies outside the {k.width}x{k.height} image")
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z], dtype=np.float64)


def project_point(p, k: PinholeIntrinsics) -> Tuple[float, float]:
    x, y, z = (float(c) for c in p)
    if not z > 0:
        raise InvalidDepth(f"Point lies behind or on the camera plane (z={z})")
    return k.fx * x / z + k.cx, k.fy * y / z + k.cy


def _check_dimensions(k: PinholeIntrinsics, *frames) -> None:
    for frame in frames:
        if (frame.width, frame.height) != (k.width, k.height):
            raise DimensionMismatch(
                f"{type(frame).__name__} is {frame.width}x{frame.height}, intrinsics expect {k.width}x{k.height}"
            )


def _valid_samples(raw: np.ndarray, depth_scale: float, depth_range: DepthRange) -> Tuple[np.ndarray, np.ndarray]:
    z_min, z_max = depth_range
    z = raw.astype(np.float64) * depth_scale
    return z, (raw != 0) & (z >= z_min) & (z <= z_max)


def backproject_depth(
    depth: DepthFrame,
    k: PinholeIntrinsics,
    depth_range: DepthRange = DEFAULT_DEPTH_RANGE,
) -> Tuple[np.ndarray, np.ndarray]:
    """Organized back-projection of a whole frame: (H, W, 3) points and an (H, W) validity map."""
    depth_range = _check_range(depth_range)
    _check_dimensions(k, depth)
    z, valid = _valid_samples(depth.data, depth.depth_scale, depth_range)
    vs, us = np.indices((depth.height, depth.width), dtype=np.float64)
    points = np.stack([(us - k.cx) * z / k.fx, (vs - k.cy) * z / k.fy, z], axis=-1)
    points[~valid] = np.nan
    return points, valid


def masked_backprojection(
    depth: DepthFrame,
    color: ColorFrame,
    mask: InstanceMask,
    k: PinholeIntrinsics,
    depth_range: DepthRange = DEFAULT_DEPTH_RANGE,
) -> PointCloud:
    depth_range = _check_range(depth_range)
    _check_dimensions(k, depth, color, mask)

    organized, valid = backproject_depth(depth, k, depth_range)
    selected = mask.bits & valid
    if not np.any(selected):
        raise EmptyCloud(
            f"None of the {np.count_nonzero(mask.bits)} masked pixels carries a valid depth in {depth_range}"
        )

    vs, us = np.nonzero(selected)  # row-major order
    return PointCloud(points=organized[vs, us], colors=color.data[vs, us], viewpoint=np.zeros(3))


def depth_validity_ratio(depth: DepthFrame, mask: InstanceMask, depth_range: DepthRange = DEFAULT_DEPTH_RANGE) -> float:
    depth_range = _check_range(depth_range)
    if (depth.width, depth.height) != (mask.width, mask.height):
        raise DimensionMismatch(
            f"Depth frame is {depth.width}x{depth.height} but mask is {mask.width}x{mask.height}"
        )
    total = int(np.count_nonzero(mask.bits))
    if total == 0:
        raise EmptyMask("Cannot compute a depth validity ratio over an empty mask")
    _, valid = _valid_samples(depth.data[mask.bits], depth.depth_scale, depth_range)
    return int(np.count_nonzero(valid)) / total
