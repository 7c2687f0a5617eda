"""L1-penalized least squares by cyclic coordinate descent.

The objective is ``0.5 * ||y - X beta||^2 + lam * ||beta||_1`` with no
intercept; callers standardize columns first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ConvergenceError, InputError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 10_000


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    lam: float

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float).ravel()
        if x.ndim != 2 or x.shape[1] < 1:
            raise InputError("design must be an n x p matrix with p >= 1")
        if x.shape[0] != y.size:
            raise InputError(f"design has {x.shape[0]} rows but response has {y.size}")
        if not self.lam >= 0:
            raise InputError(f"lambda must be >= 0, got {self.lam!r}")
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "lam", float(self.lam))

    def objective(self, beta) -> float:
        r = self.response - self.design @ beta
        return 0.5 * float(r @ r) + self.lam * float(np.abs(beta).sum())

    def lambda_max(self) -> float:
        return float(np.abs(self.design.T @ self.response).max())


def solve_gram(gram, xty, lam, beta0=None, skip=-1, tol=DEFAULT_TOL,
               max_iter=DEFAULT_MAX_ITER, trace=False):
    """Coordinate descent on precomputed ``X'X`` and ``X'y``.

    Returns the coefficient vector, or ``(beta, objective_per_sweep)`` when
    ``trace`` is set. Raises :class:`ConvergenceError` if the coordinate
    changes or the KKT violation stay above ``tol`` after ``max_iter`` sweeps.
    """
    if tol <= 0:
        raise InputError("tol must be positive")
    gram = np.ascontiguousarray(gram, dtype=float)
    xty = np.ascontiguousarray(xty, dtype=float)
    beta = np.zeros(xty.size) if beta0 is None else np.array(beta0, dtype=float)
    obj = np.full(max_iter if trace else 0, np.nan)
    sweeps, change, kkt = _kernels.cd_lasso_gram(
        gram, xty, float(lam), beta, int(skip), float(tol), int(max_iter), obj
    )
    if change > tol or kkt > tol:
        raise ConvergenceError(
            f"lasso did not converge in {max_iter} sweeps "
            f"(max change {change:.3g}, KKT violation {kkt:.3g})",
            last_iterate=beta,
            gap=max(change, kkt),
        )
    if trace:
        return beta, obj[:sweeps]
    return beta


def solve_lasso(problem: LassoProblem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, beta0=None):
    x, y = problem.design, problem.response
    return solve_gram(x.T @ x, x.T @ y, problem.lam, beta0=beta0, tol=tol, max_iter=max_iter)


def lasso_path(gram, xty, lambdas, skip=-1, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Solutions for each lambda, warm-started along a descending sequence.

    The returned rows follow the order of ``lambdas`` as given.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    order = np.argsort(-lambdas, kind="stable")
    out = np.zeros((lambdas.size, np.size(xty)))
    beta = None
    for k in order:
        beta = solve_gram(gram, xty, lambdas[k], beta0=beta, skip=skip, tol=tol, max_iter=max_iter)
        out[k] = beta
    return out


def support(beta, zero_tol=1e-8) -> np.ndarray:
    """Boolean mask of coefficients with ``|beta| > zero_tol``."""
    if zero_tol < 0:
        raise InputError("zero_tol must be >= 0")
    return np.abs(np.asarray(beta, dtype=float)) > zero_tol


def kkt_residuals(problem: LassoProblem, beta) -> np.ndarray:
    """Per-coordinate violation of the lasso optimality conditions."""
    x, y = problem.design, problem.response
    g = x.T @ (y - x @ beta)
    active = beta != 0
    out = np.maximum(np.abs(g) - problem.lam, 0.0)
    out[active] = np.abs(g[active] - problem.lam * np.sign(beta[active]))
    return out
