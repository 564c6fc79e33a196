"""Per-layer precision and learning-rate decisions."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .curvature import CurvatureEstimate, max_signed
from .errors import ConfigError
from .precision import PrecisionMode


@dataclass(frozen=True)
class SchedulerConfig:
    tau_low: float = 1e-4
    tau_high: float = 1e-2
    tau_curv: float = 50.0
    eta0: float = 0.1
    alpha: float = 0.01

    def __post_init__(self):
        if not 0 < self.tau_low < self.tau_high:
            raise ConfigError("need 0 < tau_low < tau_high")
        if not self.eta0 > 0 or not self.alpha >= 0:
            raise ConfigError("need eta0 > 0 and alpha >= 0")


@dataclass
class LayerState:
    layer: int
    variance_ema: float = 0.0
    precision: PrecisionMode = PrecisionMode.BF16
    effective_lr: float = 0.0
    promoted_by_curvature: bool = False
    promotion_expiry_step: int = -1

    def promotion_active(self, now: int) -> bool:
        return self.promoted_by_curvature and now < self.promotion_expiry_step


def select_precision(v: float, cfg: SchedulerConfig) -> PrecisionMode:
    if math.isnan(v) or v >= cfg.tau_high:
        return PrecisionMode.FP32
    if v < cfg.tau_low:
        return PrecisionMode.FP16
    return PrecisionMode.BF16


def resolve_precision(state: LayerState, cfg: SchedulerConfig, now: int) -> LayerState:
    """Variance-based assignment, unless a curvature promotion is still live."""
    if state.promotion_active(now):
        state.precision = PrecisionMode.FP32
    else:
        state.promoted_by_curvature = False
        state.precision = select_precision(state.variance_ema, cfg)
    return state


def apply_curvature_promotion(
    state: LayerState,
    estimate: CurvatureEstimate,
    cfg: SchedulerConfig,
    now: int,
    period: int,
) -> LayerState:
    if estimate.layer != state.layer:
        raise ConfigError(f"estimate for layer {estimate.layer} applied to layer {state.layer}")
    if max_signed(estimate) > cfg.tau_curv:
        state.precision = PrecisionMode.FP32
        state.promoted_by_curvature = True
        state.promotion_expiry_step = now + period
    return state


def scale_lr(estimate: CurvatureEstimate, cfg: SchedulerConfig) -> float:
    # negative curvature is clamped to zero, so the rate never exceeds eta0
    return cfg.eta0 / (1.0 + cfg.alpha * max(0.0, max_signed(estimate)))
