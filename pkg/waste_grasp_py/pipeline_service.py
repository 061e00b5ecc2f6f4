import asyncio
import json
import logging
import os
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ValidationError
from rich.console import Console
from rich.table import Table

from waste_grasp_py import constants
from waste_grasp_py.camera_geometry import depth_validity_ratio, masked_backprojection
from waste_grasp_py.cloud_processing import PointCloud, SpatialIndex, estimate_normals, remove_statistical_outliers, voxel_downsample
from waste_grasp_py.config_models import PipelineConfig
from waste_grasp_py.dataset_io import (
    LabeledMask,
    ValidationReport,
    load_manifest,
    load_predictions,
    resolve_annotations,
    resolve_detections,
    validate_manifest,
)
from waste_grasp_py.enums import Environment, ObjectStatus, PlyFormat, WasteClass
from waste_grasp_py.evaluation import EvalReport, coco_summary, format_report_table, summary_by_environment
from waste_grasp_py.exceptions import ConfigError, DimensionMismatch, GeometryError, GraspError, InputError, IoError
from waste_grasp_py.frame_io import FrameInputs
from waste_grasp_py.grasp_synthesis import GraspReport, compute_best_grasp
from waste_grasp_py.logging_setup import stage_timer
from waste_grasp_py.models import CloudSummaryPayload, FrameResultPayload, ObjectResultPayload
from waste_grasp_py.ply_io import export_ply_markers, read_ply, write_ply

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObjectResult:
    detection_index: int
    object_class: WasteClass
    score: float
    depth_validity_ratio: Optional[float] = None
    cloud: Optional[PointCloud] = None
    grasp: Optional[GraspReport] = None
    error: Optional[str] = None
    error_message: Optional[str] = None
    export_path: Optional[Path] = None

    @property
    def status(self) -> ObjectStatus:
        return ObjectStatus.FAILED if self.error else ObjectStatus.OK

    def to_payload(self, top_k: Optional[int] = None) -> ObjectResultPayload:
        cloud: Optional[CloudSummaryPayload] = None
        if self.cloud is not None and len(self.cloud):
            low, high = self.cloud.bounding_box()
            cloud = {"point_count": len(self.cloud), "bbox_min": low.tolist(), "bbox_max": high.tolist()}
        return {
            "detection_index": self.detection_index,
            "object_class": self.object_class.label,
            "score": self.score,
            "status": self.status.value,
            "depth_validity_ratio": self.depth_validity_ratio,
            "cloud": cloud,
            "grasp": None if self.grasp is None else self.grasp.to_payload(top_k),
            "error": self.error,
            "error_message": self.error_message,
        }


@dataclass(frozen=True)
class FrameResult:
    objects: Tuple[ObjectResult, ...]
    image_id: Optional[str] = None
    elapsed_ms: float = 0.0

    def to_payload(self, top_k: Optional[int] = None) -> FrameResultPayload:
        return {
            "image_id": self.image_id,
            "objects": [result.to_payload(top_k) for result in self.objects],
            "elapsed_ms": self.elapsed_ms,
        }


class PipelineService:
    def __init__(self, config: PipelineConfig, console: Optional[Console] = None):
        self.config = config
        self.console = console or Console()

    @property
    def jobs(self) -> int:
        return self.config.jobs or os.cpu_count() or 1

    def condition_cloud(self, cloud: PointCloud, object_index: Optional[int] = None) -> PointCloud:
        """Voxel downsampling, statistical outlier removal and normal estimation, in that order."""
        cfg = self.config
        with stage_timer(logger, "voxel_downsample", object=object_index, points=len(cloud)):
            cloud = voxel_downsample(cloud, cfg.voxel_size)
        with stage_timer(logger, "remove_outliers", object=object_index, points=len(cloud)):
            cloud = remove_statistical_outliers(cloud, cfg.outlier_k, cfg.outlier_sigma)
        with stage_timer(logger, "estimate_normals", object=object_index, points=len(cloud)):
            cloud = estimate_normals(cloud, cfg.normal_k, SpatialIndex(cloud.points))
        return cloud

    def _check_frame(self, frame: FrameInputs, detections: Sequence[LabeledMask]) -> None:
        k = frame.intrinsics
        for frame_part in (frame.color, frame.depth):
            if (frame_part.width, frame_part.height) != (k.width, k.height):
                raise DimensionMismatch(
                    f"{type(frame_part).__name__} is {frame_part.width}x{frame_part.height}, "
                    f"intrinsics expect {k.width}x{k.height}"
                )
        for i, detection in enumerate(detections):
            if (detection.mask.width, detection.mask.height) != (k.width, k.height):
                raise DimensionMismatch(
                    f"Detection {i} mask is {detection.mask.width}x{detection.mask.height}, "
                    f"frame is {k.width}x{k.height}"
                )

    def _process_object(self, frame: FrameInputs, detection: LabeledMask, index: int, grasp: bool = True) -> ObjectResult:
        cfg = self.config
        ratio: Optional[float] = None
        cloud: Optional[PointCloud] = None
        try:
            ratio = depth_validity_ratio(frame.depth, detection.mask, cfg.depth_range)
            with stage_timer(logger, "backproject", object=index):
                cloud = masked_backprojection(frame.depth, frame.color, detection.mask, frame.intrinsics, cfg.depth_range)
            cloud = self.condition_cloud(cloud, index)
            if not grasp:
                return ObjectResult(index, detection.label, detection.score or 0.0, ratio, cloud)
            with stage_timer(logger, "compute_best_grasp", object=index, points=len(cloud)):
                report = compute_best_grasp(cloud, cfg.gripper, cfg.grasp, detection.label)
            report = report.with_depth_validity(ratio, cfg.grasp.low_confidence_ratio)
            return ObjectResult(index, detection.label, detection.score or 0.0, ratio, cloud, report)
        except (GeometryError, GraspError, InputError) as e:
            # frame-level input errors are raised by _check_frame before any object runs
            logger.warning("object=%d %s: %s", index, type(e).__name__, e)
            return ObjectResult(
                index, detection.label, detection.score or 0.0, ratio, cloud,
                error=type(e).__name__, error_message=str(e),
            )

    async def run_pipeline(
        self,
        frame: FrameInputs,
        detections: Sequence[LabeledMask],
        image_id: Optional[str] = None,
    ) -> FrameResult:
        """Runs every detection of one frame through reconstruction and grasp synthesis.

        Objects are processed concurrently on a bounded pool of worker threads;
        the result lists them in detection order.
        """
        self._check_frame(frame, detections)
        start = time.perf_counter()
        semaphore = asyncio.Semaphore(self.jobs)

        async def _bounded(index: int, detection: LabeledMask) -> ObjectResult:
            async with semaphore:
                return await asyncio.to_thread(self._process_object, frame, detection, index)

        results = await asyncio.gather(*(_bounded(i, d) for i, d in enumerate(detections)))
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        logger.info("stage=frame image=%s objects=%d ms=%.1f", image_id, len(results), elapsed_ms)
        return FrameResult(objects=tuple(results), image_id=image_id, elapsed_ms=elapsed_ms)

    def write_frame_result(self, result: FrameResult, path: Optional[Path] = None) -> Path:
        path = Path(path) if path else Path(self.config.output_dir) / f"{result.image_id or 'frame'}_grasps.json"
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(result.to_payload(self.config.report_top_k), indent=2), encoding="utf-8")
        except OSError as e:
            raise IoError(f"Could not write frame result {path}: {e}") from e
        return path

    def display_frame_result(self, result: FrameResult) -> None:
        table = Table(title=f"Grasps for {result.image_id or 'frame'} ({result.elapsed_ms:.0f} ms)")
        table.add_column("#", justify="right")
        table.add_column("Class")
        table.add_column("Points", justify="right")
        table.add_column("Depth valid", justify="right")
        table.add_column("Best score", justify="right")
        table.add_column("Opening [m]", justify="right")
        table.add_column("Status")
        for obj in result.objects:
            best = obj.grasp.best if obj.grasp is not None else None
            status = f"[red]{obj.error}[/red]" if obj.error else "[green]ok[/green]"
            if obj.grasp is not None and obj.grasp.low_confidence:
                status += " [yellow](low confidence)[/yellow]"
            table.add_row(
                str(obj.detection_index),
                obj.object_class.label,
                str(len(obj.cloud)) if obj.cloud is not None else "-",
                f"{obj.depth_validity_ratio:.2f}" if obj.depth_validity_ratio is not None else "-",
                f"{best.score:.3f}" if best else "-",
                f"{best.opening:.4f}" if best else "-",
                status,
            )
        self.console.print(table)

    def reconstruct_objects(
        self,
        frame: FrameInputs,
        detections: Sequence[LabeledMask],
        output_dir: Optional[Path] = None,
        prefix: str = "object",
        fmt: PlyFormat = PlyFormat.ASCII,
    ) -> List[ObjectResult]:
        """Writes one conditioned PLY cloud per detection; failed objects are reported, not written."""
        self._check_frame(frame, detections)
        output_dir = Path(output_dir or self.config.output_dir)
        results = []
        for index, detection in enumerate(detections):
            result = self._process_object(frame, detection, index, grasp=False)
            if result.cloud is not None and result.error is None:
                path = output_dir / f"{prefix}_{index:03d}_{detection.label.label}.ply"
                write_ply(path, result.cloud, fmt)
                result = replace(result, export_path=path)
                self.console.print(f"💾 Object {index} ({detection.label.label}): {len(result.cloud)} points -> [green]{path}[/green]")
            else:
                self.console.print(f"[red]❌ Object {index} ({detection.label.label}): {result.error}: {result.error_message}[/red]")
            results.append(result)
        return results

    def grasp_from_ply(self, ply_path, object_class: Optional[WasteClass] = None) -> Tuple[PointCloud, GraspReport]:
        """Grasp synthesis on a stored object cloud; normals are estimated if the file carries none."""
        cloud = read_ply(ply_path)
        if not cloud.has_normals:
            with stage_timer(logger, "estimate_normals", points=len(cloud)):
                cloud = estimate_normals(cloud, self.config.normal_k)
        with stage_timer(logger, "compute_best_grasp", points=len(cloud)):
            report = compute_best_grasp(cloud, self.config.gripper, self.config.grasp, object_class)
        return cloud, report

    def export_markers(
        self,
        ply_path,
        output_path,
        object_class: Optional[WasteClass] = None,
        fmt: PlyFormat = PlyFormat.ASCII,
    ) -> Path:
        cloud, report = self.grasp_from_ply(ply_path, object_class)
        path = export_ply_markers(cloud, report, output_path, fmt)
        best = report.best
        self.console.print(
            f"✅ Best grasp score {best.score:.3f}, opening {best.opening:.4f} m -> [green]{path}[/green]"
        )
        return path

    def evaluate(
        self,
        predictions_path,
        manifest_path,
        by_environment: bool = False,
        output_path: Optional[Path] = None,
    ) -> Dict[str, EvalReport]:
        manifest = load_manifest(manifest_path)
        records = load_predictions(predictions_path)
        with stage_timer(logger, "decode_masks", annotations=len(manifest.annotations), detections=len(records)):
            gts = resolve_annotations(manifest)
            dets = resolve_detections(records, Path(predictions_path).parent, manifest)

        max_detections = self.config.evaluation.max_detections
        with stage_timer(logger, "coco_summary"):
            reports: Dict[str, EvalReport] = {"all": coco_summary(dets, gts, max_detections=max_detections)}
            if by_environment:
                by_env: Dict[Environment, EvalReport] = summary_by_environment(dets, gts, max_detections)
                reports.update({environment.value: report for environment, report in by_env.items()})

        for name, report in reports.items():
            self.console.print(format_report_table(report, title=f"Mask AP ({name})"))

        output_path = Path(output_path) if output_path else Path(self.config.output_dir) / "eval_report.json"
        payload: Any = reports["all"].to_payload()
        if by_environment:
            payload = {name: report.to_payload() for name, report in reports.items()}
        try:
            output_path.parent.mkdir(parents=True, exist_ok=True)
            output_path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        except OSError as e:
            raise IoError(f"Could not write evaluation report {output_path}: {e}") from e
        self.console.print(f"💾 Report saved to: [green]{output_path}[/green]")
        return reports

    def validate_dataset(self, manifest_path) -> ValidationReport:
        manifest = load_manifest(manifest_path)
        report = validate_manifest(manifest, self.config.dataset.balance_ratio)

        counts = Table(title="Annotations per class")
        counts.add_column("Class")
        counts.add_column("Count", justify="right")
        for label, count in report.class_counts.items():
            counts.add_row(label.label, str(count))
        self.console.print(counts)

        for finding in report.errors:
            self.console.print(f"[bold red]❌ {finding.kind}:[/bold red] {finding.message}" + (f" ({finding.path})" if finding.path else ""))
        for finding in report.warnings:
            self.console.print(f"[yellow]⚠️ {finding.kind}:[/yellow] {finding.message}")
        if report.valid:
            self.console.print(f"✅ Manifest is valid: {len(manifest.images)} images, {len(manifest.annotations)} annotations")
        return report

    def _load_or_create_global_config_data(self) -> Tuple[dict, bool]:
        """Returns (config data, file existed); falls back to defaults when the file is unreadable."""
        constants.GLOBAL_CONFIG_DIR.mkdir(parents=True, exist_ok=True)
        if constants.GLOBAL_CONFIG_FILE.exists():
            try:
                with open(constants.GLOBAL_CONFIG_FILE, "r", encoding="utf-8") as f:
                    data = json.load(f)
                if isinstance(data, dict):
                    return data, True
                logger.warning("Global config file %s is not a JSON object. Using defaults.", constants.GLOBAL_CONFIG_FILE)
            except json.JSONDecodeError:
                logger.warning("Global config file %s is corrupted. Using defaults.", constants.GLOBAL_CONFIG_FILE)
            except OSError as e:
                logger.warning("Error reading global config file %s: %s. Using defaults.", constants.GLOBAL_CONFIG_FILE, e)
        return PipelineConfig().model_dump(mode="json"), False

    @staticmethod
    def _resolve_key_path(key_to_set: str) -> List[str]:
        """Checks a dotted key such as ``gripper.max_opening`` against the config model tree."""
        parts = key_to_set.split(".")
        model: Any = PipelineConfig
        for depth, part in enumerate(parts):
            fields = getattr(model, "model_fields", None)
            if fields is None or part not in fields:
                valid = ", ".join(fields) if fields else "(none, this key is not a section)"
                prefix = ".".join(parts[:depth]) or "top level"
                raise ConfigError(f"Configuration key '{key_to_set}' is not recognized. Valid keys at {prefix}: {valid}")
            annotation = fields[part].annotation
            model = annotation if isinstance(annotation, type) and issubclass(annotation, BaseModel) else None
        if model is not None:
            raise ConfigError(f"Configuration key '{key_to_set}' names a section; set one of its fields instead")
        return parts

    @staticmethod
    def _parse_value(value_str: str) -> Any:
        try:
            return json.loads(value_str)
        except json.JSONDecodeError:
            return value_str

    def set_global_config_value(self, key_to_set: str, value_str: str) -> PipelineConfig:
        """Sets a dotted key in the global config file after validating the resulting configuration."""
        parts = self._resolve_key_path(key_to_set)
        config_data, file_existed = self._load_or_create_global_config_data()

        section = config_data
        for part in parts[:-1]:
            if not isinstance(section.get(part), dict):
                section[part] = {}
            section = section[part]
        section[parts[-1]] = self._parse_value(value_str)

        try:
            validated = PipelineConfig(**config_data)
        except ValidationError as e:
            raise ConfigError(
                f"The new value for '{key_to_set}' ('{value_str}') resulted in an invalid configuration. "
                f"Your changes were not saved.\n{e}"
            ) from e

        data_to_save = validated.model_dump(mode="json")
        with open(constants.GLOBAL_CONFIG_FILE, "w", encoding="utf-8") as f:
            json.dump(data_to_save, f, indent=2)

        shown = data_to_save
        for part in parts:
            shown = shown[part]
        verb = "updated" if file_existed else "created"
        self.console.print(f"✅ Global configuration file {verb} at: [green]{constants.GLOBAL_CONFIG_FILE}[/green]")
        self.console.print(f"   Set [cyan]{key_to_set}[/cyan] to [yellow]{json.dumps(shown)}[/yellow].")
        return validated
