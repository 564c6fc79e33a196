"""Closed-loop training: variance/curvature statistics drive precision, step
size and (through simulated memory) batch size."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .curvature import CurvatureConfig, CurvatureEstimate, top_k
from .errors import ConfigError
from .grad_stats import VarianceTracker, instant_variance
from .memory import BatchControllerConfig, BatchControllerState, MemoryModel, adjust_batch, mem_usage
from .metrics import efficiency_score, mem_pct
from .network import Network
from .precision import DEFAULT_LOSS_SCALE, PrecisionMode
from .scheduler import (
    LayerState,
    SchedulerConfig,
    apply_curvature_promotion,
    resolve_precision,
    scale_lr,
)
from .task import Task, TaskConfig, make_task

log = logging.getLogger(__name__)

FP16, BF16, FP32 = PrecisionMode.FP16, PrecisionMode.BF16, PrecisionMode.FP32

# Relative cost of one multiply-add; artifact constants, FP16 < BF16 < FP32.
PRECISION_FACTOR = {FP16: 0.5, BF16: 0.55, FP32: 1.0}
SIM_TIME_UNIT = 1e6  # multiply-adds per simulated time unit

DIVERGENCE_LOSS = 1e6
PHASES = ("collect", "precision", "lr", "batch")


@dataclass(frozen=True)
class ModeFlags:
    adapt_precision: bool = False
    curvature_promotion: bool = False
    curvature_lr: bool = False
    adapt_batch: bool = False
    base_precision: PrecisionMode = FP32

    @property
    def probes_curvature(self) -> bool:
        return self.curvature_promotion or self.curvature_lr

    @property
    def controlled(self) -> bool:
        return self.adapt_precision or self.probes_curvature or self.adapt_batch


MODES = {
    "fp32_baseline": ModeFlags(),
    "static_mixed": ModeFlags(base_precision=BF16),
    "tri_accel": ModeFlags(True, True, True, True, BF16),
    "ablation_precision_only": ModeFlags(True, True, False, False, BF16),
    "ablation_batch_only": ModeFlags(adapt_batch=True),
}


@dataclass(frozen=True)
class ControlLoopConfig:
    mode: str = "tri_accel"
    ctrl_period: int = 50
    total_steps: int = 3000
    warmup_epochs: int = 5
    initial_batch: int = 96
    momentum: float = 0.9
    loss_scale: float = DEFAULT_LOSS_SCALE
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {sorted(MODES)}")
        if self.ctrl_period < 1 or self.total_steps < 1 or self.initial_batch < 1:
            raise ConfigError("ctrl_period, total_steps and initial_batch must be >= 1")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be >= 0")


@dataclass(frozen=True)
class MemoryConfig:
    overhead_bytes: int = 415744
    mem_max: int = 524288


@dataclass(frozen=True)
class RunConfig:
    task: TaskConfig = TaskConfig()
    loop: ControlLoopConfig = ControlLoopConfig()
    scheduler: SchedulerConfig = SchedulerConfig()
    curvature: CurvatureConfig = CurvatureConfig()
    batch: BatchControllerConfig = BatchControllerConfig()
    memory: MemoryConfig = MemoryConfig()
    beta: float = 0.9

    def __post_init__(self):
        if self.curvature.period_steps % self.loop.ctrl_period:
            raise ConfigError("curvature period must be a multiple of the control period")
        if self.loop.initial_batch > self.task.n_train:
            raise ConfigError("initial batch exceeds the training set")


@dataclass
class TickRecord:
    now: int
    phases: list = field(default_factory=list)
    probed: bool = False
    estimates: Optional[list] = None
    precision: Optional[list] = None
    lrs: Optional[list] = None
    usage_fed: Optional[int] = None
    batch_before: Optional[int] = None
    batch_after: Optional[int] = None


@dataclass
class StepEvent:
    step: int
    loss: float
    variance_ema: list
    precision: list
    effective_lr: list
    batch: int
    usage: int
    sim_time_units: float
    wall_time: float
    nan_recovery: bool = False
    tick: Optional[TickRecord] = None

    @property
    def curvature_event(self) -> bool:
        return self.tick is not None and self.tick.probed


@dataclass
class RunRecord:
    mode: str
    seed: int
    accuracy_pct: float
    sim_time_units: float
    peak_mem_bytes: int
    peak_mem_pct: float
    efficiency_score: float
    wall_time: float = 0.0
    aborted: bool = False
    abort_reason: str = ""
    event_log_path: Optional[str] = None
    events: list = field(default_factory=list, repr=False)
    network: Optional[Network] = field(default=None, repr=False)  # master weights after the run


def step_time(costs, precision_map, batch: int) -> float:
    """Simulated time of one optimizer step."""
    return batch * sum(c * PRECISION_FACTOR[PrecisionMode(m)] for c, m in zip(costs, precision_map)) / SIM_TIME_UNIT


def lr_multiplier(step: int, warmup_steps: int, total_steps: int) -> float:
    """Linear warmup followed by cosine decay to zero."""
    if step < warmup_steps:
        return (step + 1) / warmup_steps
    span = max(total_steps - warmup_steps, 1)
    return 0.5 * (1.0 + math.cos(math.pi * (step - warmup_steps) / span))


class TriAccelController:
    """Holds every adaptive state of one run and executes control ticks."""

    def __init__(
        self,
        n_layers: int,
        flags: ModeFlags,
        memory: MemoryModel,
        scheduler: SchedulerConfig = SchedulerConfig(),
        curvature: CurvatureConfig = CurvatureConfig(),
        batch: BatchControllerConfig = BatchControllerConfig(),
        initial_batch: int = 96,
        beta: float = 0.9,
    ):
        self.flags = flags
        self.memory = memory
        self.sched = scheduler
        self.curv = curvature
        self.batch_cfg = batch
        self.tracker = VarianceTracker(n_layers, beta)
        self.layers = [
            LayerState(i, precision=flags.base_precision, effective_lr=scheduler.eta0)
            for i in range(n_layers)
        ]
        b0 = initial_batch
        if flags.adapt_batch:
            b0 = min(max(b0, batch.b_min), batch.b_max)
        self.batch_state = BatchControllerState(b0)
        self.estimates: dict = {}
        self.recovery_until = -1

    @property
    def batch(self) -> int:
        return self.batch_state.batch

    def precision_map(self, now: int) -> list:
        if now < self.recovery_until:
            return [FP32] * len(self.layers)
        return [s.precision for s in self.layers]

    def observe(self, grads) -> None:
        """Per-step variance EMA update from flat per-layer gradients."""
        for state, g in zip(self.layers, grads):
            state.variance_ema = self.tracker.update(state.layer, instant_variance(g))

    def recover(self, now: int, duration: int) -> None:
        """Non-finite step: run every layer at FP32 for the next ``duration`` steps."""
        self.recovery_until = now + 1 + duration

    def tick(self, now: int, operator_for_layer: Callable[[int], object] | None = None) -> TickRecord:
        """The four control sub-steps, in order."""
        rec = TickRecord(now)
        f = self.flags

        # (1) statistics: variance EMAs are current; curvature on its own period
        if f.probes_curvature and operator_for_layer is not None and now % self.curv.period_steps == 0:
            for state in self.layers:
                est = top_k(operator_for_layer(state.layer), self.curv, layer=state.layer, step=now)
                self.estimates[state.layer] = est
            rec.probed = True
            rec.estimates = [self.estimates[s.layer] for s in self.layers]
        rec.phases.append("collect")

        # (2) precision
        if f.adapt_precision:
            for state in self.layers:
                resolve_precision(state, self.sched, now)
                est = self.estimates.get(state.layer)
                if f.curvature_promotion and rec.probed and est is not None:
                    apply_curvature_promotion(state, est, self.sched, now, self.curv.period_steps)
            rec.phases.append("precision")
        rec.precision = self.precision_map(now)

        # (3) per-layer step size from the latest (possibly stale) estimate
        if f.curvature_lr:
            for state in self.layers:
                est = self.estimates.get(state.layer)
                if est is not None:
                    state.effective_lr = scale_lr(est, self.sched)
            rec.phases.append("lr")
        rec.lrs = [s.effective_lr for s in self.layers]

        # (4) batch size against memory under the precision map just assigned
        rec.batch_before = self.batch
        if f.adapt_batch:
            usage = mem_usage(self.memory, self.batch, rec.precision)
            self.batch_state = adjust_batch(self.batch_state, self.batch_cfg, usage, self.memory.mem_max)
            rec.usage_fed = usage
            rec.phases.append("batch")
        rec.batch_after = self.batch
        return rec


def build_controller(cfg: RunConfig, net: Network) -> TriAccelController:
    model = MemoryModel.for_layers(net.specs, cfg.memory.overhead_bytes, cfg.memory.mem_max)
    curv = CurvatureConfig(**{**cfg.curvature.__dict__, "seed": cfg.loop.seed})
    return TriAccelController(
        net.n_layers,
        MODES[cfg.loop.mode],
        model,
        cfg.scheduler,
        curv,
        cfg.batch,
        cfg.loop.initial_batch,
        cfg.beta,
    )


def accuracy_pct(net: Network, X, y) -> float:
    logits = net.forward(X).logits
    return 100.0 * float(np.mean(np.argmax(logits, axis=1) == y))


def train(cfg: RunConfig, task: Task | None = None) -> RunRecord:
    """One seeded run.  Deterministic given ``cfg``; never raises on divergence."""
    lc = cfg.loop
    task = task if task is not None else make_task(cfg.task)
    net = Network.mlp(cfg.task.dims, cfg.task.activation, seed=lc.seed)
    ctl = build_controller(cfg, net)
    costs = [s.n_params for s in net.specs]

    n_train = len(task.y_train)
    steps_per_epoch = math.ceil(n_train / lc.initial_batch)
    warmup = lc.warmup_epochs * steps_per_epoch
    rng = np.random.default_rng([lc.seed, 0])
    probe_rng = np.random.default_rng([lc.seed, 1])
    perm, cursor = rng.permutation(n_train), 0

    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    loss_scale = lc.loss_scale
    events: list = []
    sim_time = 0.0
    peak = 0
    nan_streak = 0
    aborted, reason = False, ""
    t_start = time.perf_counter()

    for step in range(lc.total_steps):
        t0 = time.perf_counter()
        B = min(ctl.batch, n_train)
        if cursor + B > n_train:
            perm, cursor = rng.permutation(n_train), 0
        idx = perm[cursor : cursor + B]
        cursor += B

        pmap = ctl.precision_map(step)
        res = net.backward(task.X_train[idx], task.y_train[idx], pmap, loss_scale)
        grads = [res.flat(i) for i in range(net.n_layers)]
        ctl.observe(grads)

        usage = mem_usage(ctl.memory, B, pmap)
        peak = max(peak, usage)
        dt = step_time(costs, pmap, B)
        sim_time += dt

        recovered = False
        if res.nonfinite:
            nan_streak += 1
            if nan_streak >= 2:
                aborted, reason = True, f"non-finite loss twice in a row at step {step}"
            else:
                ctl.recover(step, lc.ctrl_period)
                loss_scale /= 2.0
                recovered = True
                log.info("step %d: non-finite gradients, FP32 fallback, loss scale %g", step, loss_scale)
        else:
            nan_streak = 0
            mult = lr_multiplier(step, warmup, lc.total_steps)
            for i, (dW, db) in enumerate(res.grads):
                vW, vb = velocity[i]
                vW *= lc.momentum
                vW += dW
                vb *= lc.momentum
                vb += db
                lr = mult * ctl.layers[i].effective_lr
                net.weights[i] -= lr * vW
                net.biases[i] -= lr * vb
            if res.loss > DIVERGENCE_LOSS:
                aborted, reason = True, f"loss {res.loss:.3g} above divergence limit at step {step}"

        tick = None
        now = step + 1
        if not aborted and MODES[lc.mode].controlled and now % lc.ctrl_period == 0:
            ops = None
            if now % ctl.curv.period_steps == 0 and ctl.flags.probes_curvature:
                pidx = probe_rng.choice(n_train, size=min(ctl.curv.probe_batch, n_train), replace=False)
                Xp, yp = task.X_train[pidx], task.y_train[pidx]
                ops = lambda layer: net.hvp_operator(layer, Xp, yp)  # noqa: E731
            tick = ctl.tick(now, ops)

        events.append(
            StepEvent(
                step=step,
                loss=res.loss,
                variance_ema=list(ctl.tracker.v),
                precision=list(pmap),
                effective_lr=[s.effective_lr for s in ctl.layers],
                batch=B,
                usage=usage,
                sim_time_units=dt,
                wall_time=time.perf_counter() - t0,
                nan_recovery=recovered,
                tick=tick,
            )
        )
        if aborted:
            log.warning("run %s/%d aborted: %s", lc.mode, lc.seed, reason)
            break

    acc = accuracy_pct(net, task.X_test, task.y_test)
    pct = mem_pct(peak, cfg.memory.mem_max)
    return RunRecord(
        mode=lc.mode,
        seed=lc.seed,
        accuracy_pct=acc,
        sim_time_units=sim_time,
        peak_mem_bytes=peak,
        peak_mem_pct=pct,
        efficiency_score=efficiency_score(acc, sim_time, pct),
        wall_time=time.perf_counter() - t_start,
        aborted=aborted,
        abort_reason=reason,
        events=events,
        network=net,
    )
