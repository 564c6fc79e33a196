"""Command line front-end: ``triaccel run | score | paper-check``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace

from .errors import ConfigError
from .harness import ExperimentPlan, HarnessIOError, format_summary, reference_check, rescore_csv, run_experiment

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_CONFIG = 2
EXIT_ABORTED = 3
EXIT_IO = 4


def _csv_list(value: str) -> list:
    items = [v.strip() for v in value.split(",") if v.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _seed_list(value: str) -> list:
    try:
        return [int(v) for v in _csv_list(value)]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be integers, got {value!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="triaccel", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-run progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment plan")
    run.add_argument("--plan", help="plan file (INI); defaults are used when omitted")
    run.add_argument("--out", default="runs", help="output directory (default: %(default)s)")
    run.add_argument("--seeds", type=_seed_list, help="comma-separated seeds, overrides the plan")
    run.add_argument("--mode", type=_csv_list, help="comma-separated modes, overrides the plan")
    run.add_argument("--workers", type=int, help="parallel runs, overrides the plan")

    score = sub.add_parser("score", help="recompute efficiency scores from a runs or summary CSV")
    score.add_argument("csv")
    score.add_argument("--rtol", type=float, default=1e-9)

    check = sub.add_parser("paper-check", help="recompute the published reference scores")
    check.add_argument("--tolerance", type=float, default=0.05)
    return p


def _cmd_run(args) -> int:
    plan = ExperimentPlan.load(args.plan) if args.plan else ExperimentPlan()
    overrides = {}
    if args.seeds is not None:
        overrides["seeds"] = tuple(args.seeds)
    if args.mode is not None:
        overrides["modes"] = tuple(args.mode)
    if args.workers is not None:
        overrides["workers"] = args.workers
    if overrides:
        plan = replace(plan, **overrides)
    result = run_experiment(plan, args.out)
    print(format_summary(result.summary))
    print(f"artifacts written to {result.out_dir}")
    for r in result.records:
        if r.aborted:
            print(f"ABORTED {r.mode} seed {r.seed}: {r.abort_reason}", file=sys.stderr)
    return EXIT_ABORTED if result.any_aborted else EXIT_OK


def _cmd_score(args) -> int:
    rows = rescore_csv(args.csv)
    status = EXIT_OK
    summary_file = bool(rows) and "/seed" not in rows[0][0]
    for label, stored, recomputed in rows:
        if summary_file:
            # mean of per-run scores vs score of the means; informational only
            print(f"{label:<32} score_mean {stored:.6f}  score(means) {recomputed:.6f}")
            continue
        ok = math.isclose(stored, recomputed, rel_tol=args.rtol)
        status = status if ok else EXIT_MISMATCH
        print(f"{'ok ' if ok else 'BAD'} {label:<32} stored {stored:.9g}  recomputed {recomputed:.9g}")
    return status


def _cmd_paper_check(args) -> int:
    status = EXIT_OK
    for row, score, ok in reference_check(args.tolerance):
        dataset, model, method, acc, t, gb, printed = row
        print(f"{'PASS' if ok else 'FAIL'} {dataset:<10}{model:<17}{method:<15} printed {printed:6.2f}  recomputed {score:8.4f}")
        status = status if ok else EXIT_MISMATCH
    return status


COMMANDS = {"run": _cmd_run, "score": _cmd_score, "paper-check": _cmd_paper_check}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse usage errors count as configuration errors
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HarnessIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
