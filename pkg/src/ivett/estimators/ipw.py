"""Inverse probability weighted estimator of psi = E(Y0 | A=1)."""
from __future__ import annotations

import numpy as np

from ..core import ModelSpec, ObservedDataset
from ..errors import SingularJacobian, SingularMatrix
from ..glm import fit_logistic
from ..numerics import EstimatingSystem, solve_root, solve_root_profiled
from ._base import (Design, EstimationResult, Layout, MomentFunctionChoice, as_columns,
                    check_choice, finish)
from .sandwich import sandwich


class _IpwTerms:
    """Moment-function values at the observed and both counterfactual instruments."""

    def __init__(self, design: Design, choice: MomentFunctionChoice):
        n = design.n
        self.h1 = as_columns(choice.h1(design), n)
        self.h1_1 = as_columns(choice.h1(design, np.ones(n)), n)
        self.h1_0 = as_columns(choice.h1(design, np.zeros(n)), n)
        self.h2 = as_columns(choice.h2(design), n)
        self.t = as_columns(choice.t(design), n)
        self.l = np.asarray(choice.l(design), dtype=np.float64).reshape(n)
        self.l_1 = np.asarray(choice.l(design, np.ones(n)), dtype=np.float64).reshape(n)
        self.l_0 = np.asarray(choice.l(design, np.zeros(n)), dtype=np.float64).reshape(n)

    def centred(self, pz):
        """h1 - E(h1|C) and l - E(l|C) under Pr(Z=1|C) = pz."""
        h1c = self.h1 - (self.h1_1 * pz[:, None] + self.h1_0 * (1.0 - pz[:, None]))
        lc = self.l - (self.l_1 * pz + self.l_0 * (1.0 - pz))
        return h1c, lc


def propensity_moments(w, terms: _IpwTerms, pz, mu_h2, with_alpha=True):
    """Per-record contributions to the weighted propensity equations.

    Columns: W - 1, W (h1 - E h1|C), W (h2 - mean h2) and, when
    ``with_alpha``, W t (l - E l|C).
    """
    h1c, lc = terms.centred(pz)
    cols = [(w - 1.0)[:, None], h1c * w[:, None], (terms.h2 - mu_h2) * w[:, None]]
    if with_alpha:
        cols.append(terms.t * (w * lc)[:, None])
    return np.concatenate(cols, axis=1)


def ipw_system(dataset: ObservedDataset, spec: ModelSpec, choice: MomentFunctionChoice,
               rho_hat, design: Design = None) -> EstimatingSystem:
    """Stacked IPW equations in (theta, eta) with rho fixed at ``rho_hat``."""
    design = design or Design(dataset, spec)
    check_choice(choice, design, "ipw")
    terms = _IpwTerms(design, choice)
    pz = design.pz(np.asarray(rho_hat, dtype=np.float64))
    mu = terms.h2.mean(axis=0)
    p_theta = spec.dims["theta"]

    def residual(x):
        w = design.weights(x[:p_theta], x[p_theta:])
        return propensity_moments(w, terms, pz, mu).mean(axis=0)

    return EstimatingSystem(p_theta + spec.dims["eta"], residual)


def estimate_ipw(dataset: ObservedDataset, spec: ModelSpec,
                 choice: MomentFunctionChoice = None, tol: float = 1e-8,
                 profile_start: bool = False) -> EstimationResult:
    """Fit rho, solve the weighted equations for (theta, eta) from zero and
    average the weighted untreated outcomes.

    With ``profile_start`` a failed zero start is retried from a bracket found
    by profiling the last coordinate (see ``numerics.solve_root_profiled``).
    The reported covariance is the sandwich of the full stack
    (rho, mean h2, theta, eta, Pr(A=1), psi, mean Y among the treated).
    """
    design = Design(dataset, spec)
    choice = choice or MomentFunctionChoice.default(spec)
    check_choice(choice, design, "ipw")
    terms = _IpwTerms(design, choice)
    dims = spec.dims
    rho_fit = fit_logistic(design.x_rho, design.z)
    rho = rho_fit.coef
    pz = design.pz(rho)
    mu = terms.h2.mean(axis=0)
    p_theta = dims["theta"]

    def residual(x):
        w = design.weights(x[:p_theta], x[p_theta:])
        return propensity_moments(w, terms, pz, mu).mean(axis=0)

    system = EstimatingSystem(p_theta + dims["eta"], residual)
    res = _solve(system, p_theta, tol, profile_start)
    if res.status == "singular_jacobian":
        raise SingularJacobian(res.message)
    theta, eta = res.solution[:p_theta], res.solution[p_theta:]

    a, y = design.a, design.y
    pa = a.mean()
    w = design.weights(theta, eta)
    psi = float(np.mean((w - (1.0 - a)) * y) / pa)
    nu = dataset.treated_outcome_mean

    layout = Layout([("rho", dims["rho"]), ("mu_h2", mu.shape[0]), ("theta", p_theta),
                     ("eta", dims["eta"]), ("pa", 1), ("psi", 1), ("nu", 1)])

    def moments(x):
        p = layout.unpack(x)
        pz_ = design.pz(p["rho"])
        w_ = design.weights(p["theta"], p["eta"])
        m_rho = design.x_rho * (design.z - pz_)[:, None]
        m_mu = terms.h2 - p["mu_h2"]
        m_prop = propensity_moments(w_, terms, pz_, p["mu_h2"])
        m_pa = (a - p["pa"])[:, None]
        m_psi = ((w_ - (1.0 - a)) * y - p["psi"] * p["pa"])[:, None]
        m_nu = (a * (y - p["nu"]))[:, None]
        return np.concatenate([m_rho, m_mu, m_prop, m_pa, m_psi, m_nu], axis=1)

    x_hat = layout.pack({"rho": rho, "mu_h2": mu, "theta": theta, "eta": eta,
                         "pa": pa, "psi": psi, "nu": nu})
    diagnostics = {"converged": bool(res.converged and rho_fit.converged),
                   "iterations": res.iterations, "residual_norm": res.residual_norm,
                   "status": res.status, "start": _start(res),
                   "jacobian_condition": _cond(res.jacobian)}
    cov = _safe_sandwich(moments, x_hat, diagnostics)
    return finish("ipw", layout, x_hat, cov, diagnostics, dataset, ("rho", "theta", "eta"))


def _cond(jac):
    if jac is None or jac.size == 0:
        return None
    return float(np.linalg.cond(jac))


def _safe_sandwich(moments, x_hat, diagnostics):
    try:
        return sandwich(moments, x_hat)
    except (SingularMatrix, ArithmeticError) as exc:
        diagnostics["sandwich_error"] = str(exc)
        return None


def _solve(system, n_inner, tol, profile_start):
    x0 = np.zeros(system.dim)
    if profile_start:
        return solve_root_profiled(system, x0, n_inner, tol=tol)
    return solve_root(system, x0, tol=tol)


def _start(res) -> str:
    """'zero' for the plain start, 'profile' when the profile bracket restart was used."""
    return "profile" if "profile bracket" in res.message else "zero"
