"""One-step locally efficient estimator for binary outcome and instrument.

Starting from a DR fit, the estimated intersection-submodel law gives, for
each record's covariates, the probabilities of the six observable
configurations (A=0, Y=y, Z=z) and (A=1, Z=z). Conditional expectations given
C are exact sums over those configurations.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .. import kernels
from ..core import ModelSpec, ObservedDataset, build_design
from ..errors import NonConvergence, SingularJacobian, UnsupportedOutcomeKind
from ..glm import fit_logistic
from ..numerics import solve_linear
from ._base import WEIGHT_FLOOR, EstimationResult, Layout, MomentFunctionChoice, finish
from .dr import DrFit, fit_dr
from .ipw import _safe_sandwich

EY_METHODS = ("submodel", "empirical")
_FD = 1e-6


class _CellLaw:
    """Per-record quantities on the (y, z) grid under the fitted models."""

    def __init__(self, fit: DrFit):
        d = fit.design
        ds, spec = d.dataset, d.spec
        n = d.n
        self.n = n
        self.pz = d.pz(fit.rho)
        self.theta = fit.theta
        self.p = np.empty((n, 2))
        self.x_beta = []
        self.sel = [[None, None], [None, None]]
        for z in (0, 1):
            zz = np.full(n, float(z))
            x_xi = build_design(ds, spec.outcome_terms, z_override=zz)
            self.p[:, z] = kernels.expit(np.ascontiguousarray(x_xi @ fit.xi))
            self.x_beta.append(build_design(ds, spec.propensity_terms, z_override=zz))
            for y in (0, 1):
                self.sel[y][z] = build_design(ds, spec.selection_terms, y0_override=float(y),
                                              z_override=zz)
        self.beta = np.column_stack([xb @ fit.theta for xb in self.x_beta])

    def lin(self, eta):
        """Linear predictor of pi at (y, z): array (n, 2, 2) indexed [i, y, z]."""
        out = np.empty((self.n, 2, 2))
        for y in (0, 1):
            for z in (0, 1):
                out[:, y, z] = self.beta[:, z] + self.sel[y][z] @ eta
        return out

    def weights(self, eta):
        """1/(1-pi) at each (y, z), floored like the record-level weights."""
        return np.minimum(1.0 + np.exp(np.minimum(self.lin(eta), 50.0)), 1.0 / WEIGHT_FLOOR)

    def alpha1(self, eta):
        return np.column_stack([self.sel[1][z] @ eta for z in (0, 1)])

    def probabilities(self, eta):
        """Configuration probabilities given C.

        Returns (p0, p1): p0[i, y, z] = Pr(A=0, Y=y, Z=z | C) and
        p1[i, z] = Pr(A=1, Z=z | C), plus f[i, y, z] = Pr(Y0=y | Z=z, C).
        """
        w = self.weights(eta)
        fa0 = np.stack([1.0 - self.p, self.p], axis=1)
        pa0 = 1.0 / (fa0 * w).sum(axis=1)
        f = fa0 * w * pa0[:, None, :]
        pzs = np.column_stack([1.0 - self.pz, self.pz])
        p0 = fa0 * pa0[:, None, :] * pzs[:, None, :]
        p1 = (1.0 - pa0) * pzs
        return p0, p1, f


def _ratio(alpha1, p, g1, g0):
    e = np.exp(alpha1)
    return (e * p * g1 + (1.0 - p) * g0) / (e * p + 1.0 - p)


def _delta_cells(law: _CellLaw, eta, ey0):
    """Delta on the configuration grid: (d0[i, y, z], d1[i, z])."""
    zs = np.array([0.0, 1.0])
    vbar = (np.array([0.0, 1.0])[None, :, None] - ey0[:, None, None]) * \
        (zs[None, None, :] - law.pz[:, None, None])
    r_v = _ratio(law.alpha1(eta), law.p, vbar[:, 1, :], vbar[:, 0, :])
    w = law.weights(eta)
    d0 = w * vbar - (w - 1.0) * r_v[:, None, :]
    return d0, r_v


def _q_cells(law: _CellLaw, eta):
    """Q for g = Y on the configuration grid, same layout as Delta."""
    r_y = _ratio(law.alpha1(eta), law.p, 1.0, 0.0)
    w = law.weights(eta)
    ys = np.array([0.0, 1.0])[None, :, None]
    return (w - 1.0) * (ys - r_y[:, None, :]), r_y


def _at_records(cells0, cells1, a, y, z):
    """Pick each record's own configuration."""
    idx = np.arange(a.shape[0])
    yi, zi = y.astype(int), z.astype(int)
    return np.where(a == 1, cells1[idx, zi], cells0[idx, yi, zi])


def _cond(p0, p1, v0, v1):
    return (p0 * v0).sum(axis=(1, 2)) + (p1 * v1).sum(axis=1)


def one_step_update(eta, h, delta, ddelta):
    """eta - (P_n[h dDelta/deta^T])^-1 P_n[h Delta].

    ``h`` and ``ddelta`` are (n, q); ``delta`` is (n,). A zero ``h`` carries no
    information and leaves eta unchanged.
    """
    eta = np.asarray(eta, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64).reshape(delta.shape[0], -1)
    if not np.any(h):
        return eta.copy()
    jac = h.T @ np.asarray(ddelta).reshape(delta.shape[0], -1) / delta.shape[0]
    return eta - solve_linear(jac, h.T @ delta / delta.shape[0])


def estimate_efficient(dataset: ObservedDataset, spec: ModelSpec,
                       choice: MomentFunctionChoice = None, ey_method: str = "submodel",
                       dr_fit: DrFit = None) -> EstimationResult:
    """One-step locally efficient estimates of eta and psi.

    Parameters
    ----------
    ey_method : {"submodel", "empirical"}
        How E(Y|C) inside vbar = {Y - E(Y|C)}{Z - E(Z|C)} is estimated:
        E(Y0|C) under the fitted intersection submodel (default), or a
        logistic regression of the observed Y on the instrument-model terms.
    dr_fit : DrFit, optional
        A converged DR fit to start from; computed when omitted.

    Notes
    -----
    The standard errors come from the sandwich of the stacked one-step system
    (eta, Pr(A=1), psi, mean Y among the treated) with the nuisance fits and
    the conditional-expectation weights held fixed.
    """
    if dataset.outcome_kind != "binary":
        raise UnsupportedOutcomeKind("the efficient estimator needs a binary outcome")
    if ey_method not in EY_METHODS:
        raise ValueError(f"ey_method must be one of {EY_METHODS}")
    fit = dr_fit or fit_dr(dataset, spec, choice, with_se=False)
    if not fit.result.converged:
        raise NonConvergence("the DR fit did not converge")
    d = fit.design
    a, y, z = d.a, d.y, d.z
    n, q = d.n, spec.dims["eta"]
    law = _CellLaw(fit)
    eta_dr = fit.eta
    p0, p1, f = law.probabilities(eta_dr)
    if ey_method == "submodel":
        ey0 = f[:, 1, 0] * (1.0 - law.pz) + f[:, 1, 1] * law.pz
    else:
        ey0 = kernels.expit(np.ascontiguousarray(d.x_rho @ fit_logistic(d.x_rho, y).coef))

    def delta_all(eta):
        c0, c1 = _delta_cells(law, eta, ey0)
        return c0, c1, _at_records(c0, c1, a, y, z)

    c0, c1, delta_dr = delta_all(eta_dr)
    e_d2 = _cond(p0, p1, c0 ** 2, c1 ** 2)
    if np.any(e_d2 <= 1e-14 * max(1.0, float(np.max(e_d2)))):
        raise SingularJacobian("E(Delta^2 | C) vanishes for some covariate value")
    e_dd = np.empty((n, q))
    dd_rec = np.empty((n, q))
    for j in range(q):
        step = np.zeros(q)
        step[j] = _FD * max(1.0, abs(eta_dr[j]))
        cp0, cp1, rp = delta_all(eta_dr + step)
        cm0, cm1, rm = delta_all(eta_dr - step)
        e_dd[:, j] = _cond(p0, p1, (cp0 - cm0) / (2 * step[j]), (cp1 - cm1) / (2 * step[j]))
        dd_rec[:, j] = (rp - rm) / (2 * step[j])
    h = e_dd / e_d2[:, None]
    eta_eff = one_step_update(eta_dr, h, delta_dr, dd_rec)

    pa = a.mean()
    q0, q1 = _q_cells(law, eta_eff)
    q_rec = _at_records(q0, q1, a, y, z)
    psi_dr_eff = float(q_rec.mean() / pa)
    e0, e1, delta_eff = delta_all(eta_eff)
    e_d2_eff = _cond(p0, p1, e0 ** 2, e1 ** 2)
    hq0, hq1 = q0 / pa - psi_dr_eff, q1 / pa - psi_dr_eff
    k = _cond(p0, p1, hq0 * e0, hq1 * e1) / e_d2_eff
    psi_eff = psi_dr_eff - float(np.mean(k * delta_eff))
    nu = dataset.treated_outcome_mean

    layout = Layout([("eta", q), ("pa", 1), ("psi", 1), ("nu", 1)])

    def moments(x):
        p = layout.unpack(x)
        g0, g1 = _q_cells(law, p["eta"])
        _, _, dl = delta_all(p["eta"])
        qr = _at_records(g0, g1, a, y, z)
        return np.concatenate([
            h * dl[:, None], (a - p["pa"])[:, None],
            (qr - p["psi"] * p["pa"] - p["pa"] * k * dl)[:, None],
            (a * (y - p["nu"]))[:, None]], axis=1)

    x_hat = layout.pack({"eta": eta_eff, "pa": pa, "psi": psi_eff, "nu": nu})
    diagnostics = {"converged": True, "iterations": 1,
                   "residual_norm": float(np.max(np.abs(moments(x_hat).mean(axis=0)))),
                   "status": "one_step", "ey_method": ey_method,
                   "se_method": "sandwich of the stacked one-step system, nuisances fixed",
                   "eta_dr": float(eta_dr[0]) if q == 1 else None,
                   "psi_dr": fit.result.psi_hat}
    cov = _safe_sandwich(moments, x_hat, diagnostics)
    res = finish("eff", layout, x_hat, cov, diagnostics, dataset, ("eta",))
    params = dict(fit.result.params, eta=eta_eff)
    return replace(res, params=params, param_se=dict(fit.result.param_se, **res.param_se))
