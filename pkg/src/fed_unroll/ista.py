"""Classical ISTA, the non-learned baseline."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fed_unroll.data import as_matrix

STEP_SAFETY = 0.9
LAMBDA_FRACTION = 0.1
POWER_ITERS = 100


def soft_threshold(v, theta: float) -> np.ndarray:
    """Elementwise shrinkage ``sign(v) * max(|v| - theta, 0)``."""
    if theta < 0:
        raise ValueError(f"threshold must be non-negative, got {theta}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def spectral_norm(A, iters: int = POWER_ITERS) -> float:
    """Largest singular value of A by power iteration on A^T A.

    Starts from the all-ones vector so the estimate is deterministic.
    """
    a = as_matrix(A)
    v = np.ones(a.shape[1]) / np.sqrt(a.shape[1])
    sigma_sq = 0.0
    for _ in range(iters):
        w = a.T @ (a @ v)
        sigma_sq = float(np.linalg.norm(w))
        if sigma_sq == 0.0:
            return 0.0
        v = w / sigma_sq
    return float(np.sqrt(sigma_sq))


def default_step(A) -> float:
    return STEP_SAFETY / spectral_norm(A) ** 2


def default_lambda(A, y) -> float:
    """Per-instance heuristic ``0.1 * ||A^T y||_inf``."""
    return LAMBDA_FRACTION * float(np.max(np.abs(as_matrix(A).T @ np.asarray(y, dtype=float))))


@dataclass(frozen=True)
class IstaConfig:
    """ISTA hyperparameters. ``None`` fields are derived per instance."""

    lam: float | None = None
    step: float | None = None
    iters: int = 10

    def __post_init__(self):
        if self.lam is not None and self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.step is not None and self.step <= 0:
            raise ValueError("step size must be positive")
        if self.iters < 1:
            raise ValueError("iteration count must be positive")

    def resolve(self, A, y) -> tuple[float, float]:
        lam = default_lambda(A, y) if self.lam is None else self.lam
        step = default_step(A) if self.step is None else self.step
        return lam, step


def ista_step(A, y, x_curr, lam: float, t: float) -> np.ndarray:
    a = as_matrix(A)
    y = np.asarray(y, dtype=float)
    x_curr = np.asarray(x_curr, dtype=float)
    if y.shape[-1] != a.shape[0] or x_curr.shape[-1] != a.shape[1]:
        raise ValueError(f"operator {a.shape} incompatible with y {y.shape} and x {x_curr.shape}")
    return soft_threshold(x_curr + t * (a.T @ (y - a @ x_curr)), lam * t)


def objective(A, y, x, lam: float) -> float:
    """``0.5 ||y - Ax||^2 + lam ||x||_1``, the function each ISTA step descends."""
    r = np.asarray(y) - as_matrix(A) @ np.asarray(x)
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(x)))


def ista_solve(A, y, config: IstaConfig = IstaConfig()) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run ``config.iters`` steps from zero; also return every intermediate estimate."""
    lam, t = config.resolve(A, y)
    x = np.zeros(as_matrix(A).shape[1])
    estimates = []
    for _ in range(config.iters):
        x = ista_step(A, y, x, lam, t)
        estimates.append(x)
    return x, estimates


def ista_solve_batch(A, Y, config: IstaConfig = IstaConfig()) -> list[np.ndarray]:
    """Row-wise batch version of :func:`ista_solve`; returns the estimate after each iteration.

    When ``config.lam`` is unset each row gets its own ``0.1 * ||A^T y||_inf``.
    """
    a = as_matrix(A)
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    t = default_step(a) if config.step is None else config.step
    if config.lam is None:
        lam = LAMBDA_FRACTION * np.max(np.abs(Y @ a), axis=1, keepdims=True)
    else:
        lam = np.full((Y.shape[0], 1), config.lam)
    X = np.zeros((Y.shape[0], a.shape[1]))
    out = []
    for _ in range(config.iters):
        V = X + t * ((Y - X @ a.T) @ a)
        X = np.sign(V) * np.maximum(np.abs(V) - lam * t, 0.0)
        out.append(X)
    return out
