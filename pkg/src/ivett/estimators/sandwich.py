"""Sandwich covariance for stacked estimating equations."""
from __future__ import annotations

from typing import Callable

import numpy as np

from ..numerics import jacobian_fd, solve_linear


def sandwich(moments: Callable[[np.ndarray], np.ndarray], theta_hat, h: float = 1e-6):
    """Covariance (1/n) A^-1 B A^-T of the root of ``mean(moments(theta)) = 0``.

    Parameters
    ----------
    moments : callable
        Maps the stacked parameter vector to the n x q matrix of per-record
        moment contributions.
    theta_hat : array_like
        The solution of the stacked system.

    Returns
    -------
    ndarray
        q x q covariance matrix. A is the central-difference Jacobian of the
        averaged moments and B their empirical second moment.
    """
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    m = np.asarray(moments(theta_hat), dtype=np.float64)
    n = m.shape[0]
    a = jacobian_fd(lambda v: np.asarray(moments(v)).mean(axis=0), theta_hat, h)
    b = m.T @ m / n
    a_inv = solve_linear(a, np.eye(a.shape[0]))
    cov = a_inv @ b @ a_inv.T / n
    return 0.5 * (cov + cov.T)


def condition_number(moments, theta_hat, h: float = 1e-6) -> float:
    """2-norm condition number of the averaged-moment Jacobian."""
    a = jacobian_fd(lambda v: np.asarray(moments(v)).mean(axis=0),
                    np.asarray(theta_hat, dtype=np.float64), h)
    return float(np.linalg.cond(a))
