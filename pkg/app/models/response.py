from datetime import datetime
from typing import List, Optional

from pydantic import BaseModel


class LengthError(BaseModel):
    length: float
    t_err: float  # percent
    r_err: float  # degrees per 100 m
    segments: int


class TrajectoryMetrics(BaseModel):
    t_rel: float
    r_rel: float
    per_length: List[LengthError]
    frames: int
    insufficient_length: bool = False


class SequenceMetrics(BaseModel):
    sequence: str
    metrics: TrajectoryMetrics


class EvaluationSummary(BaseModel):
    sequences: List[SequenceMetrics]
    mean_t_rel: Optional[float] = None
    mean_r_rel: Optional[float] = None


class GradientCheckResult(BaseModel):
    name: str
    seed: int
    max_rel_error: float
    tolerance: float
    passed: bool


class RunManifest(BaseModel):
    command: str
    config_path: Optional[str] = None
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    output_dir: str
    started_at: datetime
    finished_at: Optional[datetime] = None
    exit_code: Optional[int] = None
