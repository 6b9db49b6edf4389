"""Mixed-integer programming layer: model container, backends, and builders."""

from .backend import (
    BackendError,
    HighsBackend,
    SolutionReport,
    SolveStatus,
    SolverBackend,
    default_backend,
    solve,
)
from .model import LinearModel
from .multi_period import build_multiperiod, cost_breakdown, expected_source, extract_schedule
from .single_stage import (
    MilpEncodingConfig,
    build_single_stage_dl,
    build_single_stage_nn,
    derive_relu_bounds,
    encoding_config,
    extract_decision,
    instance_feature_bounds,
    state_feature_bounds,
)

__all__ = [
    "BackendError", "HighsBackend", "LinearModel", "MilpEncodingConfig",
    "SolutionReport", "SolveStatus", "SolverBackend", "build_multiperiod",
    "build_single_stage_dl", "build_single_stage_nn", "cost_breakdown",
    "default_backend", "derive_relu_bounds", "encoding_config",
    "expected_source", "extract_decision", "extract_schedule",
    "instance_feature_bounds", "state_feature_bounds", "solve",
]
