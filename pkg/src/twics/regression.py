"""Least squares and logistic regression written directly on numpy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, special

from .errors import EstimationError, SeparationError, SingularMatrixError

SEPARATION_GUARD = 30.0


@dataclass(frozen=True)
class RegressionFit:
    coefficients: np.ndarray
    coefficient_covariance: np.ndarray
    n_obs: int
    converged: bool = True
    iterations: int = 0

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.coefficient_covariance), 0.0, None))

    def predict_linear(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coefficients

    def require_converged(self, override: bool = False) -> "RegressionFit":
        if not (self.converged or override):
            raise EstimationError(f"fit did not converge after {self.iterations} iterations")
        return self


def _collinear_columns(X: np.ndarray) -> list[int]:
    """Columns that add nothing to the span of the columns before them."""
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    kept: list[int] = []
    dropped: list[int] = []
    for j in range(X.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(Xs[:, trial]) == len(trial):
            kept.append(j)
        else:
            dropped.append(j)
    return dropped


def _rank_guard(X: np.ndarray) -> None:
    scale = np.linalg.norm(X, axis=0)
    scale[scale == 0] = 1.0
    Xs = X / scale
    ev = np.linalg.eigvalsh(Xs.T @ Xs)
    if ev[0] <= 1e-12 * max(ev[-1], 1.0):
        bad = _collinear_columns(X)
        raise SingularMatrixError(f"design matrix is rank deficient; collinear columns {bad}", bad)


def _check_design(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.shape[0]:
        raise ValueError("design matrix and response have different lengths")
    if X.shape[0] < X.shape[1]:
        raise SingularMatrixError(f"{X.shape[0]} rows for {X.shape[1]} columns")
    return X, y


def fit_ols(design_matrix: np.ndarray, y: np.ndarray) -> RegressionFit:
    """Ordinary least squares via the normal equations.

    Raises:
        SingularMatrixError: the design is rank deficient; ``collinear``
            lists the offending column indices.
    """
    X, y = _check_design(design_matrix, y)
    n, p = X.shape
    _rank_guard(X)
    xtx = X.T @ X
    try:
        factor = linalg.cho_factor(xtx)
    except linalg.LinAlgError as exc:
        raise SingularMatrixError("normal equations are not positive definite") from exc
    beta = linalg.cho_solve(factor, X.T @ y)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p) if n > p else 0.0
    cov = sigma2 * linalg.cho_solve(factor, np.eye(p))
    return RegressionFit(beta, (cov + cov.T) / 2, n, True, 1)


def fit_logistic_irls(
    design_matrix: np.ndarray,
    y: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 100,
    guard: float = SEPARATION_GUARD,
) -> RegressionFit:
    """Logistic regression by iteratively reweighted least squares (Newton).

    Stops when the largest absolute score or the largest coefficient step
    drops below ``tol``. Any coefficient beyond ``guard`` on the log-odds
    scale is treated as (quasi-)complete separation.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    X, y = _check_design(design_matrix, y)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic response must be binary 0/1")
    _rank_guard(X)
    n, p = X.shape
    beta = np.zeros(p)
    converged = False
    it = 0
    hess = None
    while it < max_iter:
        prob = special.expit(X @ beta)
        w = prob * (1.0 - prob)
        score = X.T @ (y - prob)
        hess = (X * w[:, None]).T @ X
        if np.max(np.abs(score)) < tol:
            converged = True
            break
        try:
            step = linalg.solve(hess, score, assume_a="pos")
        except (linalg.LinAlgError, ValueError) as exc:
            raise SeparationError("information matrix became singular (separation)") from exc
        beta = beta + step
        it += 1
        if np.max(np.abs(beta)) > guard:
            raise SeparationError(
                f"log-odds coefficient exceeded {guard} after {it} iterations (separation)"
            )
        if np.max(np.abs(step)) < tol:
            converged = True
            prob = special.expit(X @ beta)
            w = prob * (1.0 - prob)
            hess = (X * w[:, None]).T @ X
            break
    try:
        cov = linalg.inv(hess)
    except linalg.LinAlgError as exc:
        raise SeparationError("information matrix is singular at the solution") from exc
    return RegressionFit(beta, (cov + cov.T) / 2, n, converged, it)
