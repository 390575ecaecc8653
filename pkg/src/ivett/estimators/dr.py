"""Doubly robust estimator of the selection-bias parameter and psi."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ModelSpec, ObservedDataset
from ..errors import SingularJacobian
from ..glm import fit_logistic
from ..numerics import EstimatingSystem
from ._base import (Design, EstimationResult, Layout, MomentFunctionChoice, check_choice,
                    finish)
from ._outcome_model import outcome_model
from .ipw import _cond, _IpwTerms, _safe_sandwich, _solve, _start, propensity_moments
from .outcome import _w_values


def q_tilde(w, a, g_obs, r_g):
    """(1-A)/(1-pi) g + (A - (1-A) pi/(1-pi)) ratio, from the untreated weight W."""
    odds = w - (1.0 - a)
    return w * g_obs + (a - odds) * r_g


def q_psi(w, a, y, r_y):
    """(1-A) pi/(1-pi) (Y - ratio) + A ratio."""
    odds = w - (1.0 - a)
    return odds * (y - r_y) + a * r_y


@dataclass
class DrFit:
    """Everything the efficient estimator needs from a DR fit."""

    design: Design
    model: object
    rho: np.ndarray
    xi: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    result: EstimationResult


def fit_dr(dataset: ObservedDataset, spec: ModelSpec, choice: MomentFunctionChoice = None,
           tol: float = 1e-8, with_se: bool = True, profile_start: bool = False) -> DrFit:
    design = Design(dataset, spec)
    choice = choice or MomentFunctionChoice.default(spec)
    check_choice(choice, design, "dr")
    dims = spec.dims
    p_theta, q = dims["theta"], dims["eta"]
    a, y = design.a, design.y
    terms = _IpwTerms(design, choice)
    model = outcome_model(design, choice.g)
    rho_fit = fit_logistic(design.x_rho, design.z)
    rho = rho_fit.coef
    pz = design.pz(rho)
    mu = terms.h2.mean(axis=0)
    w_, w1, w0 = _w_values(design, choice)
    g_obs = np.asarray(choice.g(y), dtype=np.float64)
    xi_fixed = model.fit(np.zeros(q)) if model.kind == "binary" else None

    def stack_moments(theta, eta, xi, pz_, mu_):
        w = design.weights(theta, eta)
        r_g, r_y = model.ratios(xi, eta, strict=False)
        wc = w_ - (w1 * pz_[:, None] + w0 * (1.0 - pz_[:, None]))
        m_prop = propensity_moments(w, terms, pz_, mu_, with_alpha=False)
        m_eta = wc * q_tilde(w, a, g_obs, r_g)[:, None]
        return m_prop, m_eta, w, r_y

    def residual(x):
        theta, eta = x[:p_theta], x[p_theta:]
        xi = xi_fixed if xi_fixed is not None else model.fit(eta)
        m_prop, m_eta, _, _ = stack_moments(theta, eta, xi, pz, mu)
        return np.concatenate([m_prop.mean(axis=0), m_eta.mean(axis=0)])

    res = _solve(EstimatingSystem(p_theta + q, residual), p_theta, tol, profile_start)
    if res.status == "singular_jacobian":
        raise SingularJacobian(res.message)
    theta, eta = res.solution[:p_theta], res.solution[p_theta:]
    xi = model.fit(eta)
    model.ratios(xi, eta, strict=True)
    w = design.weights(theta, eta)
    _, r_y = model.ratios(xi, eta)
    pa = a.mean()
    psi = float(np.mean(q_psi(w, a, y, r_y)) / pa)
    nu = dataset.treated_outcome_mean

    layout = Layout([("rho", dims["rho"]), ("xi", model.dim), ("mu_h2", mu.shape[0]),
                     ("theta", p_theta), ("eta", q), ("pa", 1), ("psi", 1), ("nu", 1)])

    def moments(x):
        p = layout.unpack(x)
        pz_ = design.pz(p["rho"])
        m_prop, m_eta, w_s, r_y_ = stack_moments(p["theta"], p["eta"], p["xi"], pz_, p["mu_h2"])
        return np.concatenate([
            design.x_rho * (design.z - pz_)[:, None], model.moments(p["xi"], p["eta"]),
            terms.h2 - p["mu_h2"], m_prop, m_eta, (a - p["pa"])[:, None],
            (q_psi(w_s, a, y, r_y_) - p["psi"] * p["pa"])[:, None],
            (a * (y - p["nu"]))[:, None]], axis=1)

    x_hat = layout.pack({"rho": rho, "xi": xi, "mu_h2": mu, "theta": theta, "eta": eta,
                         "pa": pa, "psi": psi, "nu": nu})
    converged = res.converged and rho_fit.converged
    if model.kind == "binary":
        converged = converged and model.fit_result.converged
    diagnostics = {"converged": bool(converged), "iterations": res.iterations,
                   "residual_norm": res.residual_norm, "status": res.status,
                   "start": _start(res),
                   "jacobian_condition": _cond(res.jacobian)}
    cov = _safe_sandwich(moments, x_hat, diagnostics) if with_se else None
    result = finish("dr", layout, x_hat, cov, diagnostics, dataset,
                    ("rho", "xi", "theta", "eta"))
    return DrFit(design, model, rho, xi, theta, eta, result)


def estimate_dr(dataset: ObservedDataset, spec: ModelSpec,
                choice: MomentFunctionChoice = None, tol: float = 1e-8,
                profile_start: bool = False) -> EstimationResult:
    """Jointly solve the weighted propensity equations (without the selection
    row) and the doubly robust selection-bias equation from zero; psi is the
    mean of the augmented contrast divided by the treated fraction."""
    return fit_dr(dataset, spec, choice, tol, profile_start=profile_start).result
