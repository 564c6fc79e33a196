"""Experiment plans, multi-seed orchestration and CSV telemetry."""

from __future__ import annotations

import configparser
import csv
import io
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .curvature import CurvatureConfig
from .errors import ConfigError
from .loop import MODES, ControlLoopConfig, MemoryConfig, RunConfig, RunRecord, train
from .memory import BatchControllerConfig
from .metrics import efficiency_score
from .scheduler import SchedulerConfig
from .task import TaskConfig, make_task

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "mode", "seeds",
    "acc_mean", "acc_std",
    "time_mean", "time_std",
    "peakmem_mean", "peakmem_std",
    "score_mean", "score_std",
]  # fmt: skip

RUN_COLUMNS = [
    "mode", "seed", "accuracy_pct", "sim_time_units", "peak_mem_bytes",
    "peak_mem_pct", "efficiency_score", "aborted", "event_log",
]  # fmt: skip

# Published per-epoch results: (dataset, model, method, acc %, time s, VRAM GB, score)
REFERENCE_TABLE = [
    ("CIFAR-10", "ResNet-18", "FP32 Baseline", 77.0, 21.0, 0.35, 10.48),
    ("CIFAR-10", "ResNet-18", "AMP (Static)", 77.2, 19.4, 0.32, 12.25),
    ("CIFAR-10", "ResNet-18", "Tri-Accel", 78.1, 19.5, 0.31, 12.92),
    ("CIFAR-10", "EfficientNet-B0", "FP32 Baseline", 78.3, 18.5, 0.30, 14.11),
    ("CIFAR-10", "EfficientNet-B0", "AMP (Static)", 78.7, 17.2, 0.26, 17.59),
    ("CIFAR-10", "EfficientNet-B0", "Tri-Accel", 79.4, 16.8, 0.26, 18.17),
    ("CIFAR-100", "ResNet-18", "FP32 Baseline", 68.2, 24.3, 0.38, 7.39),
    ("CIFAR-100", "ResNet-18", "AMP (Static)", 68.7, 22.8, 0.35, 8.61),
    ("CIFAR-100", "ResNet-18", "Tri-Accel", 69.9, 22.4, 0.34, 9.18),
    ("CIFAR-100", "EfficientNet-B0", "FP32 Baseline", 72.8, 21.1, 0.33, 10.46),
    ("CIFAR-100", "EfficientNet-B0", "AMP (Static)", 73.1, 19.6, 0.31, 12.03),
    ("CIFAR-100", "EfficientNet-B0", "Tri-Accel", 74.3, 19.0, 0.29, 13.48),
]
REFERENCE_GB = 1.0  # VRAM in GB reads as percent of this reference


class HarnessIOError(OSError):
    pass


# plan-file section -> RunConfig attribute
_SECTIONS = {
    "task": ("task", TaskConfig),
    "loop": ("loop", ControlLoopConfig),
    "scheduler": ("scheduler", SchedulerConfig),
    "curvature": ("curvature", CurvatureConfig),
    "batch": ("batch", BatchControllerConfig),
    "memory": ("memory", MemoryConfig),
}
# chosen per run by the plan, so not settable in [loop] / [curvature]
_PER_RUN_KEYS = {("loop", "mode"), ("loop", "seed"), ("curvature", "seed")}


@dataclass(frozen=True)
class ExperimentPlan:
    modes: tuple = ("fp32_baseline", "tri_accel")
    seeds: tuple = (0, 1, 2)
    run: RunConfig = RunConfig()
    workers: int = 1

    def __post_init__(self):
        if not self.modes or not self.seeds:
            raise ConfigError("plan needs at least one mode and one seed")
        for m in self.modes:
            if m not in MODES:
                raise ConfigError(f"unknown mode {m!r}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("duplicate seeds in plan")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def run_config(self, mode: str, seed: int) -> RunConfig:
        return replace(self.run, loop=replace(self.run.loop, mode=mode, seed=seed))

    def to_text(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["plan"] = {
            "modes": ", ".join(self.modes),
            "seeds": ", ".join(str(s) for s in self.seeds),
            "workers": str(self.workers),
            "beta": repr(self.run.beta),
        }
        for section, (attr, cls) in _SECTIONS.items():
            obj = getattr(self.run, attr)
            cp[section] = {
                f.name: _format(getattr(obj, f.name))
                for f in fields(cls)
                if (section, f.name) not in _PER_RUN_KEYS
            }
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> ExperimentPlan:
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable plan: {exc}") from None
        unknown = set(cp.sections()) - set(_SECTIONS) - {"plan"}
        if unknown:
            raise ConfigError(f"unknown plan sections: {sorted(unknown)}")
        parts = {}
        for section, (attr, kind) in _SECTIONS.items():
            parts[attr] = _build(kind, cp[section] if cp.has_section(section) else {}, section)
        plan_sec = dict(cp["plan"]) if cp.has_section("plan") else {}
        extra = set(plan_sec) - {"modes", "seeds", "workers", "beta"}
        if extra:
            raise ConfigError(f"unknown keys in [plan]: {sorted(extra)}")
        defaults = cls()
        try:
            beta = float(plan_sec.get("beta", RunConfig().beta))
            modes = _split(plan_sec["modes"]) if "modes" in plan_sec else defaults.modes
            seeds = tuple(int(s) for s in _split(plan_sec["seeds"])) if "seeds" in plan_sec else defaults.seeds
            workers = int(plan_sec.get("workers", defaults.workers))
        except ValueError as exc:
            raise ConfigError(f"bad value in [plan]: {exc}") from None
        return cls(tuple(modes), seeds, RunConfig(beta=beta, **parts), workers)

    @classmethod
    def load(cls, path) -> ExperimentPlan:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise HarnessIOError(f"cannot read plan {path}: {exc}") from exc
        return cls.from_text(text)


def _split(value: str) -> tuple:
    return tuple(p.strip() for p in value.split(",") if p.strip())


def _format(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {raw!r}")
        return low == "true"
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(p) for p in _split(raw))
    return raw.strip()


def _build(kind, section, name):
    defaults = kind()
    known = {f.name for f in fields(kind)}
    kwargs = {}
    for key, raw in section.items():
        if key not in known or (name, key) in _PER_RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [{name}]")
        try:
            kwargs[key] = _parse(raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"[{name}] {key}: {exc}") from None
    return kind(**kwargs)


# --------------------------------------------------------------------------


def event_rows(record: RunRecord):
    """Header plus one row per optimizer step."""
    n_layers = len(record.events[0].precision) if record.events else 0
    header = (
        ["step", "loss", "batch", "usage_bytes"]
        + [f"precision_l{i}" for i in range(n_layers)]
        + [f"lr_l{i}" for i in range(n_layers)]
        + ["curvature_event", "ctrl_trace", "nan_recovery"]
    )
    yield header
    for e in record.events:
        yield (
            [e.step, repr(e.loss), e.batch, e.usage]
            + [p.name for p in e.precision]
            + [repr(lr) for lr in e.effective_lr]
            + [int(e.curvature_event), ";".join(e.tick.phases) if e.tick else "", int(e.nan_recovery)]
        )


def write_csv(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(rows)


def _run_one(args) -> RunRecord:
    cfg, task = args
    return train(cfg, task)


def summarize(records) -> list:
    """One row per mode (in first-seen order); seeds aggregated in sorted order."""
    by_mode: dict = {}
    for r in records:
        by_mode.setdefault(r.mode, []).append(r)
    rows = []
    for mode, runs in by_mode.items():
        runs = sorted(runs, key=lambda r: r.seed)

        def ms(values):
            values = list(values)
            return statistics.fmean(values), statistics.stdev(values) if len(values) > 1 else 0.0

        acc = ms(r.accuracy_pct for r in runs)
        tim = ms(r.sim_time_units for r in runs)
        mem = ms(r.peak_mem_pct for r in runs)
        sco = ms(r.efficiency_score for r in runs)
        rows.append(
            {
                "mode": mode,
                "seeds": ";".join(str(r.seed) for r in runs),
                "acc_mean": acc[0], "acc_std": acc[1],
                "time_mean": tim[0], "time_std": tim[1],
                "peakmem_mean": mem[0], "peakmem_std": mem[1],
                "score_mean": sco[0], "score_std": sco[1],
            }  # fmt: skip
        )
    return rows


def _check_writable(out_dir: Path) -> None:
    try:
        (out_dir / "events").mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise HarnessIOError(f"output directory {out_dir} is not writable: {exc}") from exc


@dataclass
class ExperimentResult:
    records: list
    summary: list
    out_dir: Path

    @property
    def any_aborted(self) -> bool:
        return any(r.aborted for r in self.records)


def run_experiment(plan: ExperimentPlan, out_dir) -> ExperimentResult:
    out_dir = Path(out_dir)
    _check_writable(out_dir)
    (out_dir / "plan.ini").write_text(plan.to_text())

    task = make_task(plan.run.task)
    jobs = [(plan.run_config(m, s), task) for m in plan.modes for s in plan.seeds]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]

    for r in records:
        path = out_dir / "events" / f"{r.mode}_seed{r.seed}.csv"
        write_csv(path, event_rows(r))
        r.event_log_path = str(path.relative_to(out_dir))
        log.info("%s seed %d: acc %.2f%% peak %.1f%% score %.4f", r.mode, r.seed, r.accuracy_pct, r.peak_mem_pct, r.efficiency_score)

    write_csv(
        out_dir / "runs.csv",
        [RUN_COLUMNS]
        + [
            [r.mode, r.seed, repr(r.accuracy_pct), repr(r.sim_time_units), r.peak_mem_bytes,
             repr(r.peak_mem_pct), repr(r.efficiency_score), int(r.aborted), r.event_log_path]
            for r in records
        ],  # fmt: skip
    )
    summary = summarize(records)
    write_csv(
        out_dir / "summary.csv",
        [SUMMARY_COLUMNS] + [[_cell(row[c]) for c in SUMMARY_COLUMNS] for row in summary],
    )
    return ExperimentResult(records, summary, out_dir)


def _cell(v):
    return repr(v) if isinstance(v, float) else v


def format_summary(summary) -> str:
    lines = [f"{'mode':<26}{'acc %':>16}{'time':>18}{'peak mem %':>16}{'score':>20}"]
    for row in summary:
        lines.append(
            f"{row['mode']:<26}"
            f"{row['acc_mean']:>9.2f} ±{row['acc_std']:<5.2f}"
            f"{row['time_mean']:>11.2f} ±{row['time_std']:<5.2f}"
            f"{row['peakmem_mean']:>9.2f} ±{row['peakmem_std']:<5.2f}"
            f"{row['score_mean']:>12.5f} ±{row['score_std']:<7.5f}"
        )
    return "\n".join(lines)


def reference_check(tolerance: float = 0.05) -> list:
    """Recompute the published scores: (row, recomputed, ok)."""
    out = []
    for row in REFERENCE_TABLE:
        acc, t, gb, printed = row[3], row[4], row[5], row[6]
        score = efficiency_score(acc, t, 100.0 * gb / REFERENCE_GB)
        out.append((row, score, abs(score - printed) <= tolerance))
    return out


def rescore_csv(path) -> list:
    """Recompute scores from a runs.csv or summary.csv.

    Returns (label, stored, recomputed) triples; for a summary file the
    recomputed value is the score of the means, which differs from the
    mean of per-run scores by design.
    """
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise HarnessIOError(f"cannot read {path}: {exc}") from exc
    if not rows:
        return []
    cols = set(rows[0])
    out = []
    if {"accuracy_pct", "sim_time_units", "peak_mem_pct", "efficiency_score"} <= cols:
        for r in rows:
            s = efficiency_score(float(r["accuracy_pct"]), float(r["sim_time_units"]), float(r["peak_mem_pct"]))
            out.append((f"{r['mode']}/seed{r['seed']}", float(r["efficiency_score"]), s))
    elif set(SUMMARY_COLUMNS) <= cols:
        for r in rows:
            s = efficiency_score(float(r["acc_mean"]), float(r["time_mean"]), float(r["peakmem_mean"]))
            out.append((r["mode"], float(r["score_mean"]), s))
    else:
        raise ConfigError(f"{path} is neither a runs nor a summary CSV")
    return out
