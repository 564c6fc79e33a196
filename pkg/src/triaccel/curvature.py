"""Top-k Hessian eigenvalues by power iteration with deflation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class CurvatureConfig:
    k: int = 5
    period_steps: int = 200
    probe_batch: int = 32
    max_iters: int = 100
    tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.k < 1 or self.period_steps < 1 or self.probe_batch < 1 or self.max_iters < 1:
            raise ConfigError("k, period_steps, probe_batch and max_iters must be >= 1")
        if not self.tol > 0:
            raise ConfigError("tol must be positive")


@dataclass
class CurvatureEstimate:
    layer: int
    eigenvalues: list  # signed, ordered by descending magnitude
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    step: int = 0


class MatrixOperator:
    """Wrap an explicit symmetric matrix as an HVP-style operator."""

    def __init__(self, matrix):
        self.matrix = np.asarray(matrix, dtype=np.float64)
        self.dim = self.matrix.shape[0]

    def __call__(self, v):
        return self.matrix @ v


def _start_vector(dim: int, seed: int, index: int) -> np.ndarray:
    u = np.random.default_rng([seed, index]).standard_normal(dim)
    return u / np.linalg.norm(u)


def power_iterate(op, cfg: CurvatureConfig, *, basis=(), shifts=(), index: int = 0):
    """Dominant eigenpair of ``op`` restricted away from ``basis``.

    ``basis``/``shifts`` hold previously found eigenvectors/values: the
    operator is deflated by their rank-one terms and iterates are
    re-orthogonalized against them.  Returns (eigenvalue, u, iterations,
    converged) with the eigenvalue a signed Rayleigh quotient.
    """
    if op.dim < 1:
        raise ConfigError("operator dimension must be >= 1")
    basis = list(basis)

    def project(x):
        for q in basis:
            x = x - (q @ x) * q
        return x

    def apply(x):
        y = np.asarray(op(x), dtype=np.float64)
        for q, lam in zip(basis, shifts):
            y = y - lam * (q @ x) * q
        return project(y)

    u = project(_start_vector(op.dim, cfg.seed, index))
    norm = np.linalg.norm(u)
    if norm == 0.0:
        return 0.0, u, 0, True
    u = u / norm
    prev = None
    lam = 0.0
    for it in range(1, cfg.max_iters + 1):
        w = apply(u)
        lam = float(u @ w)  # u is unit, so this is u'Hu / u'u
        wn = np.linalg.norm(w)
        if wn == 0.0:
            return 0.0, u, it, True
        if prev is not None and abs(lam - prev) < cfg.tol * max(1.0, abs(lam)):
            return lam, u, it, True
        prev = lam
        u = w / wn
    return float(u @ apply(u)), u, cfg.max_iters, False


def top_k(op, cfg: CurvatureConfig, layer: int = 0, step: int = 0) -> CurvatureEstimate:
    if cfg.k > op.dim:
        raise ConfigError(f"k={cfg.k} exceeds operator dimension {op.dim}")
    found = []  # (lam, u, iters, converged)
    for j in range(cfg.k):
        lam, u, its, conv = power_iterate(
            op, cfg, basis=[f[1] for f in found], shifts=[f[0] for f in found], index=j
        )
        found.append((lam, u, its, conv))
    found.sort(key=lambda f: -abs(f[0]))  # stable: ties keep discovery order
    return CurvatureEstimate(
        layer=layer,
        eigenvalues=[f[0] for f in found],
        iterations=[f[2] for f in found],
        converged=[f[3] for f in found],
        step=step,
    )


def max_signed(estimate: CurvatureEstimate) -> float:
    if not estimate.eigenvalues:
        raise ConfigError("empty curvature estimate")
    return max(estimate.eigenvalues)
