"""Per-layer EMA of gradient variance."""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError

# Stored when a gradient contains inf/nan; larger than any finite threshold.
NONFINITE = math.inf


def instant_variance(grad) -> float:
    """Population variance over the elements of one layer's gradient."""
    g = np.asarray(grad, dtype=np.float64).ravel()
    if g.size == 0:
        raise ConfigError("empty gradient")
    if not np.isfinite(g).all():
        return NONFINITE
    return float(np.mean((g - g.mean()) ** 2))


class VarianceTracker:
    """v_l <- beta * v_l + (1 - beta) * var, bootstrapped from the first sample.

    A non-finite observation pins the layer to NONFINITE for that step; the
    next finite observation bootstraps the average afresh.
    """

    def __init__(self, n_layers: int, beta: float = 0.9):
        if not 0.0 <= beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {beta}")
        self.beta = beta
        self.v = [0.0] * n_layers
        self.initialized = [False] * n_layers

    def update(self, layer: int, var: float) -> float:
        if not 0 <= layer < len(self.v):
            raise ConfigError(f"unknown layer {layer}")
        if not math.isfinite(var):
            value = NONFINITE
        elif not self.initialized[layer] or not math.isfinite(self.v[layer]):
            value = float(var)
        else:
            value = self.beta * self.v[layer] + (1.0 - self.beta) * var
        self.v[layer] = value
        self.initialized[layer] = True
        return value

    def observe(self, grads) -> list[float]:
        """Update every layer from a list of flat gradients."""
        return [self.update(i, instant_variance(g)) for i, g in enumerate(grads)]
