from typing import Optional, Tuple
from pydantic import BaseModel, Field, ConfigDict, model_validator, field_validator


class GripperSpec(BaseModel):
    max_opening: float = Field(0.08, gt=0)
    min_opening: float = Field(0.0, ge=0)
    finger_width: float = Field(0.02, gt=0)

    model_config = ConfigDict(extra="ignore", validate_assignment=True, frozen=True)

    @model_validator(mode="after")
    def _check_openings(self) -> "GripperSpec":
        if not self.min_opening < self.max_opening:
            raise ValueError(
                f"min_opening ({self.min_opening}) must be smaller than max_opening ({self.max_opening})"
            )
        return self


class ScoreWeights(BaseModel):
    antipodality: float = Field(0.5, ge=0)
    flatness: float = Field(0.3, ge=0)
    plane_proximity: float = Field(0.2, ge=0)

    model_config = ConfigDict(extra="ignore", frozen=True)

    @model_validator(mode="after")
    def _check_sum(self) -> "ScoreWeights":
        total = self.antipodality + self.flatness + self.plane_proximity
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"score weights must sum to 1, got {total}")
        return self


class GraspConfig(BaseModel):
    slice_epsilon: float = Field(0.005, gt=0)
    weights: ScoreWeights = Field(default_factory=ScoreWeights)
    score_floor: float = Field(0.3, ge=0, le=1)
    min_points: int = Field(100, ge=3)
    side_cap: int = Field(50, ge=1)
    min_line_alignment: float = Field(0.5, ge=0, le=1)
    low_confidence_ratio: float = Field(0.5, ge=0, le=1)

    model_config = ConfigDict(extra="ignore", validate_assignment=True)


class EvaluationConfig(BaseModel):
    max_detections: Optional[int] = Field(100, ge=1)

    model_config = ConfigDict(extra="ignore", validate_assignment=True)


class DatasetConfig(BaseModel):
    balance_ratio: float = Field(1.5, ge=1)

    model_config = ConfigDict(extra="ignore", validate_assignment=True)


class PipelineConfig(BaseModel):
    depth_range: Tuple[float, float] = Field((0.15, 3.0))
    voxel_size: float = Field(0.005, gt=0)
    outlier_k: int = Field(16, ge=1)
    outlier_sigma: float = Field(1.0, gt=0)
    normal_k: int = Field(16, ge=3)

    gripper: GripperSpec = Field(default_factory=GripperSpec)
    grasp: GraspConfig = Field(default_factory=GraspConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    dataset: DatasetConfig = Field(default_factory=DatasetConfig)

    output_dir: str = Field("waste-grasp-output")
    jobs: Optional[int] = Field(None, ge=1)
    report_top_k: int = Field(10, ge=1)

    model_config = ConfigDict(extra="ignore", validate_assignment=True, revalidate_instances="always")

    @field_validator("depth_range")
    @classmethod
    def _check_depth_range(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        z_min, z_max = value
        if not 0 < z_min < z_max:
            raise ValueError(f"depth_range must satisfy 0 < z_min < z_max, got {value}")
        return value
