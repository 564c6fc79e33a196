"""Aggregate efficiency score and memory percentage."""

from __future__ import annotations


def efficiency_score(accuracy_pct: float, time: float, mem_pct: float) -> float:
    """accuracy / (time * memory %) * 100; higher is better."""
    if not time > 0:
        raise ValueError(f"time must be positive, got {time}")
    if not mem_pct > 0:
        raise ValueError(f"memory percentage must be positive, got {mem_pct}")
    return accuracy_pct / (time * mem_pct) * 100.0


def mem_pct(peak_bytes: float, reference_bytes: float) -> float:
    if not reference_bytes > 0:
        raise ValueError(f"reference must be positive, got {reference_bytes}")
    return 100.0 * peak_bytes / reference_bytes
