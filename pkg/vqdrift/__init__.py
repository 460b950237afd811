from __future__ import annotations

from vqdrift.core import (
    Assignment,
    Batch,
    Codebook,
    Metrics,
    assign_batch,
    distortion,
    measure,
    nearest_code,
    utilization,
)
from vqdrift.exception import (
    DegenerateInputError,
    DivergenceError,
    Error,
    InfeasibleError,
    InvalidConfig,
    InvalidInput,
    ShapeMismatchError,
)
from vqdrift.kmeans import LloydResult, init_codebook, is_fixed_point, lloyd
from vqdrift.streams import (
    DriftKind,
    DriftProcess,
    drift_step,
    encoder_change,
    exact_jacobian,
    next_batch,
    ntk,
    sample_base,
)
from vqdrift.updaters import RuleKind, StepReport, UpdateRule, apply_schedules, update_batch

__all__ = [
    "Assignment",
    "Batch",
    "Codebook",
    "DegenerateInputError",
    "DivergenceError",
    "DriftKind",
    "DriftProcess",
    "Error",
    "InfeasibleError",
    "InvalidConfig",
    "InvalidInput",
    "LloydResult",
    "Metrics",
    "RuleKind",
    "ShapeMismatchError",
    "StepReport",
    "UpdateRule",
    "apply_schedules",
    "assign_batch",
    "distortion",
    "drift_step",
    "encoder_change",
    "exact_jacobian",
    "init_codebook",
    "is_fixed_point",
    "lloyd",
    "measure",
    "nearest_code",
    "next_batch",
    "ntk",
    "sample_base",
    "update_batch",
    "utilization",
]
