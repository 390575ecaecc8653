"""Outcome-regression estimator of psi."""
from __future__ import annotations

import numpy as np

from ..core import ModelSpec, ObservedDataset
from ..errors import SingularJacobian
from ..glm import fit_logistic
from ..numerics import EstimatingSystem
from ._base import (Design, EstimationResult, Layout, MomentFunctionChoice, as_columns,
                    check_choice, finish)
from ._outcome_model import outcome_model
from .ipw import _cond, _safe_sandwich, _solve, _start


def _w_values(design, choice):
    n = design.n
    w = as_columns(choice.w(design), n)
    w1 = as_columns(choice.w(design, np.ones(n)), n)
    w0 = as_columns(choice.w(design, np.zeros(n)), n)
    return w, w1, w0


def estimate_or(dataset: ObservedDataset, spec: ModelSpec,
                choice: MomentFunctionChoice = None, tol: float = 1e-8,
                eta_fixed=None, profile_start: bool = False) -> EstimationResult:
    """Solve mean[(w - E(w|C)) {A E(g(Y0)|A=1,Z,C; eta) + (1-A) g(Y)}] = 0 for eta
    and average the implied E(Y0 | A=1, Z, C) over the treated.

    ``eta_fixed`` skips the root-find and evaluates psi at the given eta.
    Continuous outcomes refit the two auxiliary regressions at every trial eta.
    """
    design = Design(dataset, spec)
    choice = choice or MomentFunctionChoice.default(spec)
    check_choice(choice, design, "or")
    dims = spec.dims
    q = dims["eta"]
    a, y = design.a, design.y
    model = outcome_model(design, choice.g)
    rho_fit = fit_logistic(design.x_rho, design.z)
    rho = rho_fit.coef
    pz = design.pz(rho)
    w, w1, w0 = _w_values(design, choice)
    g_obs = np.asarray(choice.g(y), dtype=np.float64)

    def eta_moments(wc, r_g):
        return wc * (a * r_g + (1.0 - a) * g_obs)[:, None]

    wc = w - (w1 * pz[:, None] + w0 * (1.0 - pz[:, None]))

    def residual(eta):
        xi = model.fit(eta)
        r_g, _ = model.ratios(xi, eta, strict=False)
        return eta_moments(wc, r_g).mean(axis=0)

    if eta_fixed is not None:
        eta = np.atleast_1d(np.asarray(eta_fixed, dtype=np.float64))
        status = {"converged": True, "iterations": 0, "residual_norm": float("nan"),
                  "status": "fixed", "jacobian_condition": None}
    else:
        res = _solve(EstimatingSystem(q, residual), 0, tol, profile_start)
        if res.status == "singular_jacobian":
            raise SingularJacobian(res.message)
        eta = res.solution
        status = {"converged": bool(res.converged and rho_fit.converged),
                  "iterations": res.iterations, "residual_norm": res.residual_norm,
                  "status": res.status, "start": _start(res),
                  "jacobian_condition": _cond(res.jacobian)}
    xi = model.fit(eta)
    _, r_y = model.ratios(xi, eta, strict=True)
    if model.kind == "binary":
        status["converged"] = bool(status["converged"] and model.fit_result.converged)
    pa = a.mean()
    psi = float(np.mean(a * r_y) / pa)
    nu = dataset.treated_outcome_mean

    blocks = [("rho", dims["rho"]), ("xi", model.dim)]
    if eta_fixed is None:
        blocks.append(("eta", q))
    blocks += [("pa", 1), ("psi", 1), ("nu", 1)]
    layout = Layout(blocks)

    def moments(x):
        p = layout.unpack(x)
        eta_ = p["eta"] if eta_fixed is None else eta
        pz_ = design.pz(p["rho"])
        wc_ = w - (w1 * pz_[:, None] + w0 * (1.0 - pz_[:, None]))
        r_g, r_y_ = model.ratios(p["xi"], eta_, strict=False)
        parts = [design.x_rho * (design.z - pz_)[:, None], model.moments(p["xi"], eta_)]
        if eta_fixed is None:
            parts.append(eta_moments(wc_, r_g))
        parts += [(a - p["pa"])[:, None], (a * r_y_ - p["psi"] * p["pa"])[:, None],
                  (a * (y - p["nu"]))[:, None]]
        return np.concatenate(parts, axis=1)

    vals = {"rho": rho, "xi": xi, "eta": eta, "pa": pa, "psi": psi, "nu": nu}
    x_hat = layout.pack(vals)
    cov = _safe_sandwich(moments, x_hat, status)
    result = finish("or", layout, x_hat, cov, status, dataset, ("rho", "xi", "eta"))
    if eta_fixed is not None:
        result = _with_eta(result, eta)
    return result


def _with_eta(result: EstimationResult, eta) -> EstimationResult:
    from dataclasses import replace
    params = dict(result.params, eta=eta)
    return replace(result, eta_hat=eta, se_eta=np.zeros_like(eta), params=params)
