"""Logistic and least-squares regression for the nuisance models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import ModelSpec, ObservedDataset, build_design
from .errors import PreconditionError, SingularJacobian, UnsupportedOutcomeKind
from .numerics import EstimatingSystem, solve_linear, solve_root

SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class FitResult:
    coef: np.ndarray
    cov_model: Optional[np.ndarray]
    converged: bool
    loglik_or_sse: float
    iterations: int = 0
    separation: bool = False

    @property
    def se(self) -> np.ndarray:
        if self.cov_model is None:
            return np.full(self.coef.shape, np.nan)
        return np.sqrt(np.clip(np.diag(self.cov_model), 0.0, None))


def _check_shape(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"design {x.shape} and response {y.shape} do not conform")
    if x.shape[0] < x.shape[1]:
        raise PreconditionError(f"need n >= p, got n={x.shape[0]}, p={x.shape[1]}")
    return x, y


def logistic_score(x, y, coef) -> np.ndarray:
    """Mean Bernoulli score X'(y - expit(X b)) / n."""
    mu = kernels.expit(np.ascontiguousarray(x @ coef))
    return x.T @ (y - mu) / x.shape[0]


def fit_logistic(x, y) -> FitResult:
    """Maximum likelihood logistic regression by Newton's method from zero.

    Complete or quasi-complete separation is flagged (``separation=True``,
    ``converged=False``) when a coefficient exceeds 30 in absolute value or the
    Newton step has not settled at the returned point.
    """
    x, y = _check_shape(x, y)
    n, p = x.shape

    def hessian(b):
        mu = kernels.expit(np.ascontiguousarray(x @ b))
        w = mu * (1.0 - mu)
        return -(x.T @ (x * w[:, None])) / n

    system = EstimatingSystem(p, lambda b: logistic_score(x, y, b), hessian)
    res = solve_root(system, np.zeros(p))
    if res.status == "singular_jacobian" and res.iterations == 0:
        raise SingularJacobian(f"logistic design is rank deficient: {res.message}")
    coef = res.solution
    info = -hessian(coef) * n
    cov = None
    settled = False
    try:
        cov = solve_linear(info, np.eye(p))
        cov = 0.5 * (cov + cov.T)
        settled = np.max(np.abs(cov @ (x.T @ (y - kernels.expit(np.ascontiguousarray(x @ coef)))))) < 1e-3
    except ArithmeticError:
        pass
    separation = bool(np.max(np.abs(coef), initial=0.0) > SEPARATION_BOUND or not settled)
    lin = x @ coef
    loglik = float(np.sum(y * lin - np.logaddexp(0.0, lin)))
    return FitResult(coef, cov, bool(res.converged and not separation), loglik,
                     res.iterations, separation)


def fit_linear(x, y) -> FitResult:
    """Ordinary least squares through the normal equations."""
    x, y = _check_shape(x, y)
    coef = solve_linear(x.T @ x, x.T @ y)
    resid = y - x @ coef
    return FitResult(coef, None, True, float(resid @ resid))


def fit_outcome_restricted(dataset: ObservedDataset, spec: ModelSpec) -> FitResult:
    """Logistic regression of Y on the outcome terms among untreated records."""
    if dataset.outcome_kind != "binary":
        raise UnsupportedOutcomeKind(
            "continuous outcomes use the profile regressions of the OR/DR estimators")
    untreated = dataset.a == 0
    p = len(spec.outcome_terms)
    if untreated.sum() < p:
        raise PreconditionError(f"{int(untreated.sum())} untreated records for {p} outcome terms")
    x = build_design(dataset, spec.outcome_terms)[untreated]
    return fit_logistic(x, dataset.y[untreated])


def fit_instrument(dataset: ObservedDataset, spec: ModelSpec) -> FitResult:
    """Logistic regression of Z on the instrument terms."""
    return fit_logistic(build_design(dataset, spec.instrument_terms), dataset.z)
