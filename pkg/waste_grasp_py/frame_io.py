import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from pydantic import ValidationError

from waste_grasp_py.camera_geometry import ColorFrame, DepthFrame, InstanceMask, PinholeIntrinsics
from waste_grasp_py.constants import DEFAULT_DEPTH_SCALE
from waste_grasp_py.exceptions import DimensionMismatch, IoError, ParseError, SchemaError


@dataclass(frozen=True)
class FrameInputs:
    color: ColorFrame
    depth: DepthFrame
    intrinsics: PinholeIntrinsics


def _open_image(path) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
        return image
    except FileNotFoundError as e:
        raise IoError(f"Image file not found: {path}") from e
    except (UnidentifiedImageError, OSError) as e:
        raise IoError(f"Could not read image {path}: {e}") from e


def image_size(path) -> tuple[int, int]:
    """(width, height) from the image header without decoding pixels."""
    try:
        with Image.open(path) as image:
            return image.size
    except (UnidentifiedImageError, OSError) as e:
        raise IoError(f"Could not read image {path}: {e}") from e


def load_intrinsics(path) -> PinholeIntrinsics:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"Could not read intrinsics sidecar {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON in intrinsics sidecar {path}: {e.msg}", line=e.lineno, column=e.colno) from e
    try:
        return PinholeIntrinsics.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first["loc"]) or None
        raise SchemaError(f"{first['msg']} in intrinsics sidecar {path}", field=field) from e


def save_intrinsics(path, intrinsics: PinholeIntrinsics) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(intrinsics.model_dump_json(indent=2), encoding="utf-8")
    return path


def load_depth_png(path, depth_scale: float = DEFAULT_DEPTH_SCALE) -> DepthFrame:
    image = _open_image(path)
    if image.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise SchemaError(f"Depth image {path} must be a 16-bit single-channel PNG, got mode {image.mode}")
    samples = np.asarray(image)
    if samples.min(initial=0) < 0 or samples.max(initial=0) > np.iinfo(np.uint16).max:
        raise SchemaError(f"Depth image {path} holds values outside the 16-bit range")
    return DepthFrame.from_array(samples.astype(np.uint16), depth_scale=depth_scale)


def save_depth_png(path, depth: DepthFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(depth.data, dtype=np.uint16)).save(path, format="PNG")
    return path


def load_color_png(path) -> ColorFrame:
    return ColorFrame.from_array(np.asarray(_open_image(path).convert("RGB")))


def save_color_png(path, color: ColorFrame) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(color.data)).save(path, format="PNG")
    return path


def load_mask_png(path) -> InstanceMask:
    """Any nonzero value is foreground."""
    image = _open_image(path)
    if image.mode not in ("L", "1", "P"):
        image = image.convert("L")
    return InstanceMask.from_array(np.asarray(image) != 0)


def save_mask_png(path, mask: InstanceMask) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(mask.bits.astype(np.uint8) * 255).save(path, format="PNG")
    return path


def load_frame(color_path, depth_path, intrinsics_path) -> FrameInputs:
    intrinsics = load_intrinsics(intrinsics_path)
    color = load_color_png(color_path)
    depth = load_depth_png(depth_path, depth_scale=intrinsics.depth_scale)
    for frame in (color, depth):
        if (frame.width, frame.height) != (intrinsics.width, intrinsics.height):
            raise DimensionMismatch(
                f"{type(frame).__name__} is {frame.width}x{frame.height}, "
                f"intrinsics expect {intrinsics.width}x{intrinsics.height}"
            )
    return FrameInputs(color=color, depth=depth, intrinsics=intrinsics)
