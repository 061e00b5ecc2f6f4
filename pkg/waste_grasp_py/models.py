from typing import Dict, List, Optional, TypedDict


class GraspCandidatePayload(TypedDict):
    index_a: int
    index_b: int
    contact_a: List[float]
    contact_b: List[float]
    normal_a: List[float]
    normal_b: List[float]
    score: float
    opening: float
    approach: List[float]

class GraspReportPayload(TypedDict):
    object_class: Optional[str]
    point_count: int
    depth_validity_ratio: Optional[float]
    low_confidence: bool
    flags: List[str]
    candidate_count: int
    candidates: List[GraspCandidatePayload]

class CloudSummaryPayload(TypedDict):
    point_count: int
    bbox_min: List[float]
    bbox_max: List[float]

class ObjectResultPayload(TypedDict):
    detection_index: int
    object_class: str
    score: float
    status: str
    depth_validity_ratio: Optional[float]
    cloud: Optional[CloudSummaryPayload]
    grasp: Optional[GraspReportPayload]
    error: Optional[str]
    error_message: Optional[str]

class FrameResultPayload(TypedDict):
    image_id: Optional[str]
    objects: List[ObjectResultPayload]
    elapsed_ms: float

class EvalReportPayload(TypedDict):
    ap: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    per_class: Dict[str, Optional[float]]
    num_images: int
    num_instances: int
    num_detections: int

class ValidationFindingPayload(TypedDict):
    kind: str
    message: str
    path: Optional[str]

class ValidationReportPayload(TypedDict):
    valid: bool
    errors: List[ValidationFindingPayload]
    warnings: List[ValidationFindingPayload]
    class_counts: Dict[str, int]
