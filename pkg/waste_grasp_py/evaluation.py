"""COCO-style mask average precision.

Thresholds, the 101-point recall grid and the area buckets follow the COCO
protocol. A metric with no ground truth behind it is reported as ``None``, and
means are taken over defined entries only.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from rich.table import Table

from waste_grasp_py.camera_geometry import InstanceMask
from waste_grasp_py.constants import IOU_THRESHOLDS, LARGE_AREA_LIMIT, RECALL_THRESHOLDS, SMALL_AREA_LIMIT
from waste_grasp_py.dataset_io import LabeledMask, mask_area, split_by_environment
from waste_grasp_py.enums import AreaBucket, Environment, WasteClass
from waste_grasp_py.exceptions import DimensionMismatch, UndefinedMetric
from waste_grasp_py.models import EvalReportPayload

logger = logging.getLogger(__name__)

AreaRange = Tuple[float, float]

AREA_RANGES: Dict[AreaBucket, AreaRange] = {
    AreaBucket.ALL: (0.0, float("inf")),
    AreaBucket.SMALL: (0.0, float(SMALL_AREA_LIMIT)),
    AreaBucket.MEDIUM: (float(SMALL_AREA_LIMIT), float(LARGE_AREA_LIMIT)),
    AreaBucket.LARGE: (float(LARGE_AREA_LIMIT), float("inf")),
}


def _in_range(area: float, area_range: Optional[AreaRange]) -> bool:
    # half-open: [low, high)
    return area_range is None or area_range[0] <= area < area_range[1]


def mask_iou(a: InstanceMask, b: InstanceMask) -> float:
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"Cannot compare a {a.width}x{a.height} mask with a {b.width}x{b.height} mask")
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return np.count_nonzero(a.bits & b.bits) / union


def _iou_matrix(dets: Sequence[LabeledMask], gts: Sequence[LabeledMask]) -> np.ndarray:
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    shapes = {(item.mask.width, item.mask.height) for item in (*dets, *gts)}
    if len(shapes) > 1:
        raise DimensionMismatch(f"Masks of one image disagree on dimensions: {sorted(shapes)}")
    d = np.stack([item.mask.bits.ravel() for item in dets]).astype(np.float64)
    g = np.stack([item.mask.bits.ravel() for item in gts]).astype(np.float64)
    intersection = d @ g.T
    union = d.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] - intersection
    return np.divide(intersection, union, out=np.zeros_like(intersection), where=union > 0)


@dataclass(frozen=True)
class MatchSet:
    """Greedy matching result for one image and class at one IoU threshold.

    Indices refer to the input order of the detection and ground-truth lists.
    Ignored entries (outside the area range) are neither true nor false.
    """
    iou_threshold: float
    pairs: Tuple[Tuple[int, int], ...]
    false_positives: Tuple[int, ...]
    false_negatives: Tuple[int, ...]
    ignored_detections: Tuple[int, ...] = ()
    ignored_ground_truths: Tuple[int, ...] = ()

    @property
    def true_positives(self) -> int:
        return len(self.pairs)


def _score_order(scores: Sequence[float]) -> np.ndarray:
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def _greedy_match(
    ious: np.ndarray,
    det_order: np.ndarray,
    det_areas: Sequence[int],
    gt_areas: Sequence[int],
    iou_threshold: float,
    area_range: Optional[AreaRange],
) -> MatchSet:
    gt_ignore = np.array([not _in_range(area, area_range) for area in gt_areas], dtype=bool)
    # non-ignored ground truth is preferred; ties keep the lower index
    gt_order = np.argsort(gt_ignore, kind="stable")
    gt_matched = np.zeros(len(gt_areas), dtype=bool)

    pairs: List[Tuple[int, int]] = []
    false_positives: List[int] = []
    ignored_detections: List[int] = []
    for d in det_order:
        best_iou, best_gt = iou_threshold, -1
        for g in gt_order:
            if gt_matched[g]:
                continue
            if best_gt >= 0 and not gt_ignore[best_gt] and gt_ignore[g]:
                break
            iou = ious[d, g]
            if iou < best_iou or (best_gt >= 0 and iou == best_iou):
                continue
            best_iou, best_gt = iou, g
        if best_gt >= 0:
            gt_matched[best_gt] = True
            if gt_ignore[best_gt]:
                ignored_detections.append(int(d))
            else:
                pairs.append((int(d), int(best_gt)))
        elif not _in_range(det_areas[d], area_range):
            ignored_detections.append(int(d))
        else:
            false_positives.append(int(d))

    false_negatives = [int(g) for g in range(len(gt_areas)) if not gt_matched[g] and not gt_ignore[g]]
    return MatchSet(
        iou_threshold=float(iou_threshold),
        pairs=tuple(pairs),
        false_positives=tuple(false_positives),
        false_negatives=tuple(false_negatives),
        ignored_detections=tuple(sorted(ignored_detections)),
        ignored_ground_truths=tuple(int(g) for g in np.flatnonzero(gt_ignore)),
    )


def match_detections(
    dets: Sequence[LabeledMask],
    gts: Sequence[LabeledMask],
    iou_threshold: float,
    area_range: Optional[AreaRange] = None,
) -> MatchSet:
    """Greedy COCO matching of one image's detections of one class against its ground truth.

    Detections are visited by descending score, ties in input order. Each takes
    the unmatched ground truth of highest IoU at or above the threshold, the
    lowest index on IoU ties.
    """
    ious = _iou_matrix(dets, gts)
    order = _score_order([item.score for item in dets])
    return _greedy_match(
        ious, order, [item.area for item in dets], [item.area for item in gts], iou_threshold, area_range,
    )


@dataclass(frozen=True)
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    def __len__(self) -> int:
        return len(self.recall)


def precision_recall_curve(ranked: Sequence[bool], num_gt: int) -> PRCurve:
    """Raw (uninterpolated) curve along detections ranked by descending score."""
    if num_gt <= 0:
        raise UndefinedMetric("Precision/recall is undefined without ground truth")
    hits = np.asarray(ranked, dtype=bool)
    tp = np.cumsum(hits, dtype=np.float64)
    fp = np.cumsum(~hits, dtype=np.float64)
    recall = tp / num_gt
    precision = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    return PRCurve(recall=recall, precision=precision)


def average_precision(ranked: Sequence[bool], num_gt: int) -> float:
    """101-point interpolated AP of a score-ranked list of true/false positive flags."""
    curve = precision_recall_curve(ranked, num_gt)
    if not len(curve):
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    positions = np.searchsorted(curve.recall, RECALL_THRESHOLDS, side="left")
    sampled = np.zeros(len(RECALL_THRESHOLDS))
    reachable = positions < len(curve)
    sampled[reachable] = envelope[positions[reachable]]
    return float(sampled.mean())


def _mean_defined(values: Iterable[Optional[float]]) -> Optional[float]:
    defined = [value for value in values if value is not None]
    return float(np.mean(defined)) if defined else None


@dataclass(frozen=True)
class EvalReport:
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    per_class: Dict[WasteClass, Optional[float]] = field(default_factory=dict)
    num_images: int = 0
    num_instances: int = 0
    num_detections: int = 0

    def to_payload(self) -> EvalReportPayload:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_small": self.ap_small,
            "ap_medium": self.ap_medium,
            "ap_large": self.ap_large,
            "per_class": {label.label: value for label, value in self.per_class.items()},
            "num_images": self.num_images,
            "num_instances": self.num_instances,
            "num_detections": self.num_detections,
        }


@dataclass
class _Cell:
    """Detections and ground truth of one image and class, with their IoUs precomputed."""
    det_indices: List[int] = field(default_factory=list)
    gt_indices: List[int] = field(default_factory=list)
    ious: Optional[np.ndarray] = None
    det_order: Optional[np.ndarray] = None


def _build_cells(
    dets: Sequence[LabeledMask],
    gts: Sequence[LabeledMask],
    image_ids: Iterable[str],
    max_detections: Optional[int],
) -> Dict[Tuple[str, WasteClass], _Cell]:
    wanted = set(image_ids)
    cells: Dict[Tuple[str, WasteClass], _Cell] = defaultdict(_Cell)
    for i, item in enumerate(dets):
        if item.image_id in wanted:
            cells[(item.image_id, item.label)].det_indices.append(i)
    for i, item in enumerate(gts):
        if item.image_id in wanted:
            cells[(item.image_id, item.label)].gt_indices.append(i)

    for cell in cells.values():
        order = _score_order([dets[i].score for i in cell.det_indices])
        if max_detections is not None:
            # cap keeps the highest-scored detections of this image and class
            keep = np.sort(order[:max_detections])
            cell.det_indices = [cell.det_indices[i] for i in keep]
            order = _score_order([dets[i].score for i in cell.det_indices])
        cell.det_order = order
        cell.ious = _iou_matrix([dets[i] for i in cell.det_indices], [gts[i] for i in cell.gt_indices])
    return cells


def _class_threshold_ap(
    cells: Sequence[_Cell],
    dets: Sequence[LabeledMask],
    gts: Sequence[LabeledMask],
    det_areas: Sequence[int],
    gt_areas: Sequence[int],
    iou_thresholds: Sequence[float],
    area_range: AreaRange,
) -> Optional[List[float]]:
    """AP per threshold for one class within one area range, or None without ground truth."""
    num_gt = sum(1 for cell in cells for g in cell.gt_indices if _in_range(gt_areas[g], area_range))
    if num_gt == 0:
        return None
    results = []
    for threshold in iou_thresholds:
        outcomes: List[Tuple[float, int, bool]] = []
        for cell in cells:
            match = _greedy_match(
                cell.ious,
                cell.det_order,
                [det_areas[i] for i in cell.det_indices],
                [gt_areas[i] for i in cell.gt_indices],
                threshold,
                area_range,
            )
            matched = {d for d, _ in match.pairs}
            for d in (*matched, *match.false_positives):
                global_index = cell.det_indices[d]
                outcomes.append((-dets[global_index].score, global_index, d in matched))
        outcomes.sort()
        results.append(average_precision([hit for _, _, hit in outcomes], num_gt))
    return results


def coco_summary(
    dets: Sequence[LabeledMask],
    gts: Sequence[LabeledMask],
    max_detections: Optional[int] = 100,
    image_ids: Optional[Iterable[str]] = None,
    iou_thresholds: Sequence[float] = tuple(IOU_THRESHOLDS),
) -> EvalReport:
    """Mask AP suite over all images that carry detections or ground truth.

    Score ties across the whole detection list break by input order.
    """
    if image_ids is None:
        image_ids = {item.image_id for item in (*dets, *gts)}
    image_ids = set(image_ids)
    cells = _build_cells(dets, gts, image_ids, max_detections)
    det_areas = [mask_area(item.mask) for item in dets]
    gt_areas = [mask_area(item.mask) for item in gts]
    thresholds = [float(t) for t in iou_thresholds]
    index_50 = int(np.argmin(np.abs(np.asarray(thresholds) - 0.5)))
    index_75 = int(np.argmin(np.abs(np.asarray(thresholds) - 0.75)))

    by_class: Dict[WasteClass, List[_Cell]] = defaultdict(list)
    for (_, label), cell in sorted(cells.items(), key=lambda entry: (entry[0][0], entry[0][1])):
        by_class[label].append(cell)

    bucket_means: Dict[AreaBucket, Optional[float]] = {}
    per_class: Dict[WasteClass, Optional[float]] = {}
    ap50_values: List[Optional[float]] = []
    ap75_values: List[Optional[float]] = []
    for bucket, area_range in AREA_RANGES.items():
        class_means: List[Optional[float]] = []
        for label in WasteClass:
            values = _class_threshold_ap(
                by_class.get(label, []), dets, gts, det_areas, gt_areas, thresholds, area_range,
            )
            mean = None if values is None else float(np.mean(values))
            class_means.append(mean)
            if bucket is AreaBucket.ALL:
                per_class[label] = mean
                ap50_values.append(None if values is None else values[index_50])
                ap75_values.append(None if values is None else values[index_75])
        bucket_means[bucket] = _mean_defined(class_means)

    counted_dets = sum(len(cell.det_indices) for cell in cells.values())
    counted_gts = sum(len(cell.gt_indices) for cell in cells.values())
    logger.debug("evaluated images=%d instances=%d detections=%d", len(image_ids), counted_gts, counted_dets)
    return EvalReport(
        ap=bucket_means[AreaBucket.ALL],
        ap50=_mean_defined(ap50_values),
        ap75=_mean_defined(ap75_values),
        ap_small=bucket_means[AreaBucket.SMALL],
        ap_medium=bucket_means[AreaBucket.MEDIUM],
        ap_large=bucket_means[AreaBucket.LARGE],
        per_class=per_class,
        num_images=len(image_ids),
        num_instances=counted_gts,
        num_detections=counted_dets,
    )


def summary_by_environment(
    dets: Sequence[LabeledMask],
    gts: Sequence[LabeledMask],
    max_detections: Optional[int] = 100,
) -> Dict[Environment, EvalReport]:
    """One report per environment; an image belongs to the environment its records are tagged with."""
    reports = {}
    for environment, members in split_by_environment((*dets, *gts)).items():
        image_ids = {item.image_id for item in members}
        if image_ids:
            reports[environment] = coco_summary(dets, gts, max_detections=max_detections, image_ids=image_ids)
    return reports


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def format_report_table(report: EvalReport, title: str = "Mask AP") -> Table:
    table = Table(title=title)
    table.add_column("Metric", style="cyan")
    table.add_column("Value", justify="right")
    for name in ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large"):
        table.add_row(name.upper().replace("_", " "), _fmt(getattr(report, name)))
    table.add_section()
    for label, value in report.per_class.items():
        table.add_row(f"AP {label.label}", _fmt(value))
    table.add_section()
    table.add_row("images", str(report.num_images))
    table.add_row("instances", str(report.num_instances))
    table.add_row("detections", str(report.num_detections))
    return table
