"""Closed-loop training controller coupling precision, curvature-scaled step
size and memory-driven batch size, at desk scale on emulated floating point."""

from .curvature import CurvatureConfig, CurvatureEstimate, max_signed, power_iterate, top_k
from .errors import ConfigError
from .grad_stats import NONFINITE, VarianceTracker, instant_variance
from .harness import ExperimentPlan, HarnessIOError, run_experiment, summarize
from .loop import MODES, ControlLoopConfig, MemoryConfig, RunConfig, RunRecord, TriAccelController, train
from .memory import BatchControllerConfig, BatchControllerState, MemoryModel, adjust_batch, mem_usage, settle
from .metrics import efficiency_score, mem_pct
from .network import LayerSpec, Network, hvp
from .precision import PrecisionMode, quantize, quantize_buffer
from .scheduler import LayerState, SchedulerConfig, apply_curvature_promotion, resolve_precision, scale_lr, select_precision
from .task import TaskConfig, make_task

__version__ = "0.1.0"

__all__ = [
    "BatchControllerConfig", "BatchControllerState", "ConfigError", "ControlLoopConfig",
    "CurvatureConfig", "CurvatureEstimate", "ExperimentPlan", "HarnessIOError", "LayerSpec",
    "LayerState", "MODES", "MemoryConfig", "MemoryModel", "NONFINITE", "Network",
    "PrecisionMode", "RunConfig", "RunRecord", "SchedulerConfig", "TaskConfig",
    "TriAccelController", "VarianceTracker", "adjust_batch", "apply_curvature_promotion",
    "efficiency_score", "hvp", "instant_variance", "make_task", "max_signed", "mem_pct",
    "mem_usage", "power_iterate", "quantize", "quantize_buffer", "resolve_precision",
    "run_experiment", "scale_lr", "select_precision", "settle", "summarize", "top_k", "train",
]  # fmt: skip
