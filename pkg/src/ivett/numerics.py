"""Dense linear solves, finite-difference Jacobians and a damped Newton root finder."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import lapack

from .errors import (MaxIterations, NoDescent, NonFiniteEvaluation, SingularJacobian,
                     SingularMatrix)

PIVOT_RTOL = 1e-12


def solve_linear(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` by LU factorisation with row pivoting.

    Raises SingularMatrix when a pivot falls below ``1e-12`` times the largest
    row norm of ``a``. ``b`` may be a vector or a matrix of right-hand sides.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"matrix must be square, got shape {a.shape}")
    if a.shape[0] == 0:
        return np.zeros_like(b)
    if not np.all(np.isfinite(a)):
        raise SingularMatrix("matrix has non-finite entries")
    scale = np.sqrt((a * a).sum(axis=1)).max()
    lu, piv, info = lapack.dgetrf(a)
    pivots = np.abs(np.diag(lu))
    if scale == 0.0 or info > 0 or pivots.min() < PIVOT_RTOL * scale:
        raise SingularMatrix(
            f"pivot {pivots.min():.3g} below {PIVOT_RTOL:g} x max row norm {scale:.3g}")
    x, info = lapack.dgetrs(lu, piv, b)
    return x


def jacobian_fd(f: Callable, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian, step ``h * max(1, |x_j|)`` per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    cols = []
    for j in range(x.shape[0]):
        hj = h * max(1.0, abs(x[j]))
        xp = x.copy()
        xm = x.copy()
        xp[j] += hj
        xm[j] -= hj
        fp = np.asarray(f(xp), dtype=np.float64)
        fm = np.asarray(f(xm), dtype=np.float64)
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise NonFiniteEvaluation(f"non-finite value while differencing coordinate {j}")
        cols.append((fp - fm) / (2.0 * hj))
    if not cols:
        return np.zeros((np.size(f(x)), 0))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class EstimatingSystem:
    """A p-dimensional residual, usually the sample average of per-record moments.

    ``jacobian`` is optional; when omitted the solver differences ``residual``.
    """

    dim: int
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class RootResult:
    solution: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool
    status: str = "converged"
    message: str = ""
    jacobian: Optional[np.ndarray] = None

    _errors = {"singular_jacobian": SingularJacobian, "no_descent": NoDescent,
               "max_iterations": MaxIterations}

    def raise_for_status(self) -> RootResult:
        if not self.converged:
            raise self._errors.get(self.status, MaxIterations)(self.message or self.status)
        return self


def _maxnorm(r) -> float:
    return float(np.max(np.abs(r))) if np.size(r) else 0.0


def solve_root(system: EstimatingSystem, x0, tol: float = 1e-8, max_iter: int = 100,
               max_halvings: int = 30, fd_step: float = 1e-6) -> RootResult:
    """Damped Newton iteration on ``system.residual``.

    Each step solves ``J d = -r`` and is halved until the max-norm of the
    residual decreases. Failures (singular Jacobian, exhausted line search,
    iteration limit) are reported through ``status`` together with the best
    iterate seen; nothing is raised.
    """
    x = np.array(x0, dtype=np.float64).reshape(-1)
    if x.shape[0] != system.dim:
        raise ValueError(f"x0 has length {x.shape[0]}, system has dim {system.dim}")
    r = np.asarray(system.residual(x), dtype=np.float64)
    if not np.all(np.isfinite(r)):
        raise NonFiniteEvaluation("residual is not finite at the starting value")
    norm = _maxnorm(r)
    jac_fn = system.jacobian or (lambda v: jacobian_fd(system.residual, v, fd_step))
    jac = None
    for it in range(max_iter + 1):
        if norm <= tol:
            return RootResult(x, norm, it, True, jacobian=jac)
        if it == max_iter:
            break
        try:
            jac = np.asarray(jac_fn(x), dtype=np.float64)
            step = solve_linear(jac, -r)
        except (SingularMatrix, NonFiniteEvaluation) as exc:
            return RootResult(x, norm, it, False, "singular_jacobian", str(exc), jac)
        t = 1.0
        for _ in range(max_halvings + 1):
            x_new = x + t * step
            with np.errstate(all="ignore"):
                r_new = np.asarray(system.residual(x_new), dtype=np.float64)
            if np.all(np.isfinite(r_new)) and _maxnorm(r_new) < norm:
                break
            t *= 0.5
        else:
            return RootResult(x, norm, it, False, "no_descent",
                              f"line search failed after {max_halvings} halvings", jac)
        x, r, norm = x_new, r_new, _maxnorm(r_new)
    return RootResult(x, norm, max_iter, False, "max_iterations",
                      f"residual {norm:.3g} > tol {tol:g} after {max_iter} iterations", jac)


def solve_root_profiled(system: EstimatingSystem, x0, n_inner: int, grid=None,
                        tol: float = 1e-8, **kwargs) -> RootResult:
    """:func:`solve_root` from ``x0``, restarted from a profile bracket on failure.

    The last coordinate is treated as a scalar profile parameter: for each
    value on ``grid`` the first ``n_inner`` equations are solved for the first
    ``n_inner`` coordinates, and the sign of the last equation is recorded. The
    joint solve is restarted from the profile root found between the first
    sign change, or from the grid point with the smallest profile residual.
    Only systems with exactly one profile coordinate are rescued; otherwise
    the first result is returned unchanged.
    """
    first = solve_root(system, x0, tol=tol, **kwargs)
    if first.converged or system.dim != n_inner + 1:
        return first
    grid = np.linspace(-5.0, 5.0, 41) if grid is None else np.asarray(grid, dtype=np.float64)
    x0 = np.array(x0, dtype=np.float64).reshape(-1)

    def profile(t, start):
        if n_inner == 0:
            x = np.array([t])
            with np.errstate(all="ignore"):
                v = float(system.residual(x)[0])
            return (x, v) if np.isfinite(v) else (None, np.nan)
        inner = EstimatingSystem(
            n_inner, lambda u: system.residual(np.append(u, t))[:n_inner])
        try:
            res = solve_root(inner, start, tol=tol, **kwargs)
        except NonFiniteEvaluation:
            return None, np.nan
        if not res.converged:
            return None, np.nan
        x = np.append(res.solution, t)
        return x, float(system.residual(x)[n_inner])

    pts, vals = [], []
    start = x0[:n_inner]
    for t in grid:
        x, v = profile(t, start)
        pts.append(x)
        vals.append(v)
        if x is not None:
            start = x[:n_inner]
    vals = np.array(vals)
    restart = None
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b <= 0:
            lo, hi, x_lo = grid[i], grid[i + 1], pts[i]
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                x_mid, v_mid = profile(mid, x_lo[:n_inner])
                if x_mid is None:
                    break
                if np.sign(v_mid) == np.sign(a):
                    lo, a, x_lo = mid, v_mid, x_mid
                else:
                    hi = mid
                if hi - lo < 1e-6:
                    break
            restart = x_lo
            break
    if restart is None:
        if not np.isfinite(vals).any():
            return first
        restart = pts[int(np.nanargmin(np.abs(vals)))]
    second = solve_root(system, restart, tol=tol, **kwargs)
    if second.converged or second.residual_norm < first.residual_norm:
        return replace(second, message=(second.message + " (restarted from profile bracket)")
                       .strip())
    return first
