"""Synthetic Gaussian-mixture classification task."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class TaskConfig:
    n_features: int = 8
    n_classes: int = 4
    n_train: int = 9600
    n_test: int = 2400
    separation: float = 1.5  # std of the class means
    feature_scale: float = 3.0  # raw inputs are not normalized
    hidden: tuple = (32, 32)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if min(self.n_features, self.n_classes, self.n_train, self.n_test) < 1:
            raise ConfigError("task sizes must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def dims(self) -> tuple:
        return (self.n_features, *self.hidden, self.n_classes)


@dataclass
class Task:
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def make_task(cfg: TaskConfig) -> Task:
    """Two Gaussian blobs per class around random centers, unit covariance."""
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.n_classes, 2, cfg.n_features)) * cfg.separation

    def draw(n):
        y = rng.integers(0, cfg.n_classes, n)
        blob = rng.integers(0, 2, n)
        X = centers[y, blob] + rng.standard_normal((n, cfg.n_features))
        return X * cfg.feature_scale, y

    X_tr, y_tr = draw(cfg.n_train)
    X_te, y_te = draw(cfg.n_test)
    return Task(X_tr, y_tr, X_te, y_te)
