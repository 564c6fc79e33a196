"""Simulated device memory and the utilization-band batch-size controller."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

from .errors import ConfigError
from .precision import BYTES_PER_VALUE, PrecisionMode

UP, DOWN, HOLD = "up", "down", "hold"


@dataclass(frozen=True)
class MemoryModel:
    """usage(B) = fixed_bytes + B * sum_l values_per_sample[l] * bytes(mode_l)."""

    fixed_bytes: int
    values_per_sample: tuple  # per layer
    mem_max: int

    def __post_init__(self):
        if self.mem_max <= 0:
            raise ConfigError("mem_max must be positive")
        if any(v < 1 for v in self.values_per_sample):
            raise ConfigError("each layer must hold at least one value per sample")

    @classmethod
    def for_layers(cls, specs: Sequence, overhead_bytes: int, mem_max: int) -> MemoryModel:
        """Each layer keeps its input, pre-activation and output per sample.

        Fixed part: FP32 master weights, gradients and momentum (3 x 4 bytes
        per parameter) plus a flat runtime overhead.
        """
        n_params = sum(s.n_params for s in specs)
        values = tuple(s.in_dim + 2 * s.out_dim for s in specs)
        return cls(12 * n_params + overhead_bytes, values, mem_max)

    def per_sample_bytes(self, precision_map) -> int:
        if len(precision_map) != len(self.values_per_sample):
            raise ConfigError("precision map does not cover every layer")
        return sum(
            n * BYTES_PER_VALUE[PrecisionMode(m)]
            for n, m in zip(self.values_per_sample, precision_map)
        )


def mem_usage(model: MemoryModel, batch: int, precision_map) -> int:
    if batch < 1:
        raise ConfigError("batch must be >= 1")
    return model.fixed_bytes + batch * model.per_sample_bytes(precision_map)


@dataclass(frozen=True)
class BatchControllerConfig:
    rho_low: float = 0.7
    rho_high: float = 0.9
    delta_up: int = 8
    delta_down: int = 8
    b_min: int = 1
    b_max: int = 4096

    def __post_init__(self):
        if not 0 < self.rho_low < self.rho_high <= 1:
            raise ConfigError("need 0 < rho_low < rho_high <= 1")
        if self.delta_up < 1 or self.delta_down < 1:
            raise ConfigError("batch steps must be >= 1")
        if not 1 <= self.b_min <= self.b_max:
            raise ConfigError("need 1 <= b_min <= b_max")


@dataclass(frozen=True)
class BatchControllerState:
    batch: int
    last_usage: int = 0
    last_decision: str = HOLD


def adjust_batch(
    state: BatchControllerState, cfg: BatchControllerConfig, usage: float, mem_max: float
) -> BatchControllerState:
    if usage < cfg.rho_low * mem_max:
        batch, decision = state.batch + cfg.delta_up, UP
    elif usage > cfg.rho_high * mem_max:
        batch, decision = state.batch - cfg.delta_down, DOWN
    else:
        batch, decision = state.batch, HOLD
    batch = min(max(batch, cfg.b_min), cfg.b_max)
    return replace(state, batch=batch, last_usage=usage, last_decision=decision)


@dataclass
class SettleTrace:
    points: list = field(default_factory=list)  # (batch, usage, decision)
    outcome: str = ""  # "hold", "saturated", "cycle" or "budget"

    @property
    def steps(self) -> int:
        return len(self.points)


def settle(
    model: MemoryModel,
    cfg: BatchControllerConfig,
    state: BatchControllerState,
    precision_map,
    max_steps: int | None = None,
) -> SettleTrace:
    """Run measure -> adjust until the controller holds, pins at a bound, or 2-cycles."""
    if max_steps is None:
        max_steps = 4 * (cfg.b_max // min(cfg.delta_up, cfg.delta_down) + 2)
    trace = SettleTrace()
    history = [state.batch]
    for _ in range(max_steps):
        usage = mem_usage(model, state.batch, precision_map)
        new = adjust_batch(state, cfg, usage, model.mem_max)
        trace.points.append((state.batch, usage, new.last_decision))
        if new.last_decision == HOLD:
            trace.outcome = "hold"
            return trace
        if new.batch == state.batch:
            trace.outcome = "saturated"
            return trace
        history.append(new.batch)
        if len(history) >= 3 and history[-1] == history[-3]:
            trace.outcome = "cycle"
            return trace
        state = new
    trace.outcome = "budget"
    return trace
