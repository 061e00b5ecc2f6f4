"""Dataset manifest, ground-truth annotations and detector predictions.

Masks are referenced either by an 8-bit PNG path (nonzero = foreground) or by
an inline uncompressed COCO RLE object ``{"size": [h, w], "counts": [...]}``.
Relative paths resolve against the manifest's directory.
"""
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from waste_grasp_py.camera_geometry import InstanceMask
from waste_grasp_py.enums import Environment, WasteClass
from waste_grasp_py.exceptions import (
    EmptyMask,
    InputError,
    IoError,
    LengthMismatch,
    ParseError,
    SchemaError,
    WasteGraspError,
)
from waste_grasp_py.frame_io import image_size, load_intrinsics, load_mask_png
from waste_grasp_py.models import ValidationFindingPayload, ValidationReportPayload

logger = logging.getLogger(__name__)


class BoundingBox(NamedTuple):
    u_min: int
    v_min: int
    u_max: int
    v_max: int


class RleMask(BaseModel):
    size: Tuple[int, int]
    counts: List[int]

    model_config = ConfigDict(frozen=True)

    @field_validator("size")
    @classmethod
    def _positive_size(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] <= 0 or value[1] <= 0:
            raise ValueError(f"size must hold a positive [height, width], got {list(value)}")
        return value

    @field_validator("counts")
    @classmethod
    def _non_negative_counts(cls, value: List[int]) -> List[int]:
        if any(count < 0 for count in value):
            raise ValueError("counts must be non-negative")
        return value


class ImageEntry(BaseModel):
    id: str
    color: str
    depth: str
    intrinsics: str
    environment: Environment = Environment.INDOOR

    model_config = ConfigDict(extra="ignore", frozen=True)


class _MaskReference(BaseModel):
    """A record carrying exactly one of ``mask`` (PNG path) or ``rle``."""
    image_id: str
    label: WasteClass = Field(..., alias="class")
    mask: Optional[str] = None
    rle: Optional[RleMask] = None

    model_config = ConfigDict(extra="ignore", frozen=True, populate_by_name=True)

    @field_validator("label", mode="before")
    @classmethod
    def _parse_label(cls, value):
        return WasteClass.parse(value)

    @model_validator(mode="after")
    def _one_mask_source(self):
        if (self.mask is None) == (self.rle is None):
            raise ValueError("exactly one of 'mask' or 'rle' must be given")
        return self


class AnnotationRecord(_MaskReference):
    environment: Optional[Environment] = None


class DetectionRecord(_MaskReference):
    score: float = Field(..., ge=0.0, le=1.0)


class DatasetManifest(BaseModel):
    images: List[ImageEntry] = Field(default_factory=list)
    annotations: List[AnnotationRecord] = Field(default_factory=list)
    # directory relative paths resolve against; not serialized
    base_dir: Path = Field(default=Path("."), exclude=True)

    model_config = ConfigDict(extra="ignore", frozen=True)

    @model_validator(mode="after")
    def _check_references(self):
        seen = set()
        for entry in self.images:
            if entry.id in seen:
                raise ValueError(f"duplicate image id '{entry.id}'")
            seen.add(entry.id)
        for annotation in self.annotations:
            if annotation.image_id not in seen:
                raise ValueError(f"annotation references unknown image id '{annotation.image_id}'")
        return self

    def image(self, image_id: str) -> ImageEntry:
        for entry in self.images:
            if entry.id == image_id:
                return entry
        raise KeyError(image_id)

    def resolve_path(self, relative: str) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else self.base_dir / path

    def environment_of(self, annotation: AnnotationRecord) -> Environment:
        if annotation.environment is not None:
            return annotation.environment
        return self.image(annotation.image_id).environment


def _read_json(path) -> object:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"Could not read {path}: {e}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"Invalid JSON in {path}: {e.msg}", line=e.lineno, column=e.colno) from e


def _schema_error(e: ValidationError, source) -> SchemaError:
    first = e.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or None
    return SchemaError(f"{first['msg']} at '{field}' in {source}", field=field)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, dict):
        raise SchemaError(f"Manifest {path} must be a JSON object", field=None)
    try:
        return DatasetManifest.model_validate({**data, "base_dir": path.parent})
    except ValidationError as e:
        raise _schema_error(e, path) from e


def dump_manifest(path, manifest: DatasetManifest) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = manifest.model_dump(mode="json", by_alias=True, exclude_none=True)
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def load_predictions(path) -> List[DetectionRecord]:
    path = Path(path)
    data = _read_json(path)
    if not isinstance(data, list):
        raise SchemaError(f"Predictions file {path} must be a JSON array", field=None)
    records = []
    for position, item in enumerate(data):
        try:
            records.append(DetectionRecord.model_validate(item))
        except ValidationError as e:
            error = _schema_error(e, path)
            raise SchemaError(str(error), field=f"{position}.{error.field}") from e
    return records


def dump_predictions(path, records: Iterable[DetectionRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = [record.model_dump(mode="json", by_alias=True, exclude_none=True) for record in records]
    path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    return path


def encode_rle(mask: InstanceMask) -> RleMask:
    """Column-major runs alternating background/foreground, starting with background."""
    flat = mask.bits.flatten(order="F").astype(np.int8)
    changes = np.flatnonzero(np.diff(flat)) + 1
    boundaries = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(boundaries).tolist()
    if flat.size and flat[0]:
        counts = [0] + counts
    return RleMask(size=(mask.height, mask.width), counts=counts)


def decode_rle(rle: RleMask) -> InstanceMask:
    height, width = rle.size
    counts = np.asarray(rle.counts, dtype=np.int64)
    if int(counts.sum()) != height * width:
        raise LengthMismatch(f"RLE counts sum to {int(counts.sum())}, expected {height * width} for {width}x{height}")
    values = np.arange(len(counts)) % 2 == 1
    flat = np.repeat(values, counts)
    return InstanceMask.from_array(flat.reshape((height, width), order="F"))


def mask_area(mask: InstanceMask) -> int:
    return int(np.count_nonzero(mask.bits))


def mask_bbox(mask: InstanceMask) -> BoundingBox:
    rows, cols = np.nonzero(mask.bits)
    if rows.size == 0:
        raise EmptyMask("Bounding box of an empty mask is undefined")
    return BoundingBox(int(cols.min()), int(rows.min()), int(cols.max()), int(rows.max()))


def resolve_mask(record: _MaskReference, base_dir: Path = Path(".")) -> InstanceMask:
    if record.rle is not None:
        return decode_rle(record.rle)
    path = Path(record.mask)
    return load_mask_png(path if path.is_absolute() else Path(base_dir) / path)


@dataclass(frozen=True)
class LabeledMask:
    """A decoded instance: ground truth when ``score`` is None, a detection otherwise."""
    image_id: str
    label: WasteClass
    mask: InstanceMask
    score: Optional[float] = None
    environment: Optional[Environment] = None

    @property
    def area(self) -> int:
        return mask_area(self.mask)


def resolve_annotations(manifest: DatasetManifest) -> List[LabeledMask]:
    return [
        LabeledMask(
            image_id=annotation.image_id,
            label=annotation.label,
            mask=resolve_mask(annotation, manifest.base_dir),
            environment=manifest.environment_of(annotation),
        )
        for annotation in manifest.annotations
    ]


def resolve_detections(
    records: Sequence[DetectionRecord],
    base_dir: Path = Path("."),
    manifest: Optional[DatasetManifest] = None,
) -> List[LabeledMask]:
    environments: Dict[str, Environment] = {}
    if manifest is not None:
        environments = {entry.id: entry.environment for entry in manifest.images}
    return [
        LabeledMask(
            image_id=record.image_id,
            label=record.label,
            mask=resolve_mask(record, base_dir),
            score=record.score,
            environment=environments.get(record.image_id),
        )
        for record in records
    ]


def class_counts(records: Iterable[_MaskReference]) -> Dict[WasteClass, int]:
    counts = Counter(record.label for record in records)
    return {label: counts.get(label, 0) for label in WasteClass}


def split_by_environment(items: Iterable[LabeledMask]) -> Dict[Environment, List[LabeledMask]]:
    groups: Dict[Environment, List[LabeledMask]] = {environment: [] for environment in Environment}
    for item in items:
        if item.environment is not None:
            groups[item.environment].append(item)
    return groups


@dataclass(frozen=True)
class ValidationFinding:
    kind: str
    message: str
    path: Optional[str] = None

    def to_payload(self) -> ValidationFindingPayload:
        return {"kind": self.kind, "message": self.message, "path": self.path}


@dataclass(frozen=True)
class ValidationReport:
    errors: Tuple[ValidationFinding, ...]
    warnings: Tuple[ValidationFinding, ...]
    class_counts: Dict[WasteClass, int]

    @property
    def valid(self) -> bool:
        return not self.errors

    def to_payload(self) -> ValidationReportPayload:
        return {
            "valid": self.valid,
            "errors": [finding.to_payload() for finding in self.errors],
            "warnings": [finding.to_payload() for finding in self.warnings],
            "class_counts": {label.label: count for label, count in self.class_counts.items()},
        }


def _expected_size(entry: ImageEntry, manifest: DatasetManifest, errors: List[ValidationFinding]) -> Optional[Tuple[int, int]]:
    """(width, height) every file of the entry must share, or None if it cannot be established."""
    sizes: Dict[str, Tuple[int, int]] = {}
    for kind in ("intrinsics", "color", "depth"):
        path = manifest.resolve_path(getattr(entry, kind))
        if not path.is_file():
            errors.append(ValidationFinding("missing_file", f"Image '{entry.id}': {kind} file not found", str(path)))
            continue
        try:
            if kind == "intrinsics":
                intrinsics = load_intrinsics(path)
                sizes[kind] = (intrinsics.width, intrinsics.height)
            else:
                sizes[kind] = image_size(path)
        except InputError as e:
            errors.append(ValidationFinding("unreadable_file", f"Image '{entry.id}': {e}", str(path)))

    reference = sizes.get("intrinsics") or sizes.get("color") or sizes.get("depth")
    for kind, size in sizes.items():
        if size != reference:
            errors.append(ValidationFinding(
                "dimension_mismatch",
                f"Image '{entry.id}': {kind} is {size[0]}x{size[1]}, expected {reference[0]}x{reference[1]}",
                str(manifest.resolve_path(getattr(entry, kind))),
            ))
    return reference


def validate_manifest(m: DatasetManifest, balance_ratio: float = 1.5) -> ValidationReport:
    """Checks referenced files, dimensions, mask contents and class balance without raising."""
    errors: List[ValidationFinding] = []
    warnings: List[ValidationFinding] = []
    sizes = {entry.id: _expected_size(entry, m, errors) for entry in m.images}

    for position, annotation in enumerate(m.annotations):
        where = str(m.resolve_path(annotation.mask)) if annotation.mask is not None else f"annotations.{position}.rle"
        if annotation.mask is not None and not m.resolve_path(annotation.mask).is_file():
            errors.append(ValidationFinding("missing_file", f"Annotation {position}: mask file not found", where))
            continue
        try:
            mask = resolve_mask(annotation, m.base_dir)
        except WasteGraspError as e:
            errors.append(ValidationFinding("unreadable_mask", f"Annotation {position}: {e}", where))
            continue
        expected = sizes.get(annotation.image_id)
        if expected is not None and (mask.width, mask.height) != expected:
            errors.append(ValidationFinding(
                "dimension_mismatch",
                f"Annotation {position}: mask is {mask.width}x{mask.height}, image is {expected[0]}x{expected[1]}",
                where,
            ))
        if mask_area(mask) == 0:
            errors.append(ValidationFinding("empty_mask", f"Annotation {position}: mask is empty", where))

    counts = class_counts(m.annotations)
    if m.annotations:
        lowest, highest = min(counts.values()), max(counts.values())
        if lowest == 0:
            missing = ", ".join(label.label for label, count in counts.items() if count == 0)
            warnings.append(ValidationFinding("class_balance", f"Classes without annotations: {missing}"))
        elif highest / lowest > balance_ratio:
            warnings.append(ValidationFinding(
                "class_balance",
                f"Class counts are unbalanced: max/min ratio {highest / lowest:.2f} exceeds {balance_ratio}",
            ))

    logger.debug("validated manifest images=%d annotations=%d errors=%d", len(m.images), len(m.annotations), len(errors))
    return ValidationReport(errors=tuple(errors), warnings=tuple(warnings), class_counts=counts)
