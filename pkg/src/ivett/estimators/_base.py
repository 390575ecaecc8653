"""Shared pieces of the psi estimators: designs, moment choices, results."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .. import kernels
from ..core import ModelSpec, ObservedDataset, Term, build_design, validate
from ..errors import NonBinaryFlag, PreconditionError

WEIGHT_FLOOR = 1e-6


def identity_g(y):
    return y


def extended_propensity(theta, eta, y0, z, c=None, spec: Optional[ModelSpec] = None):
    """Pr(A=1 | Y0, Z, C) = expit(beta(Z, C; theta) + alpha(Y0, Z, C; eta)).

    Inputs may be scalars or per-record arrays. Without ``spec`` the
    propensity design is just the intercept and the selection term is ``y0``.
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=np.float64))
    z = np.broadcast_to(np.asarray(z, dtype=np.float64), y0.shape)
    if c is None:
        c = np.zeros((y0.shape[0], 0))
    else:
        c = np.asarray(c, dtype=np.float64)
        c = np.broadcast_to(c.reshape(-1, c.shape[-1]) if c.ndim else c.reshape(1, 1),
                            (y0.shape[0], c.shape[-1] if c.ndim else 1))
    if spec is None:
        prop, sel = (Term(("1",)),), (Term(("y0",)),)
    else:
        prop, sel = spec.propensity_terms, spec.selection_terms
    ds = ObservedDataset(np.zeros_like(y0), y0, z, c, "continuous")
    lin = build_design(ds, prop) @ np.atleast_1d(theta) + \
        build_design(ds, sel, y0_override=y0) @ np.atleast_1d(eta)
    out = kernels.expit(np.ascontiguousarray(lin))
    return out if out.shape[0] > 1 else float(out[0])


def moment_ratio_binary(eta, p, g=lambda y: y):
    """E{g(Y0) | A=1, z, c} for binary Y0 when alpha = eta * Y0.

    ``p`` is Pr(Y=1 | A=0, z, c). Returns
    (e^eta p g(1) + (1-p) g(0)) / (e^eta p + 1 - p).
    """
    p = np.asarray(p, dtype=np.float64)
    alpha = np.broadcast_to(np.asarray(eta, dtype=np.float64), p.shape)
    g1 = np.broadcast_to(np.asarray(g(1.0), dtype=np.float64), p.shape)
    g0 = np.broadcast_to(np.asarray(g(0.0), dtype=np.float64), p.shape)
    out = kernels.binary_ratio(*(np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
                                 for v in (alpha, p, g1, g0)))
    return out.reshape(p.shape) if p.ndim else float(out[0])


def dr_q(g, a, pi, ratio):
    """(1-A) pi/(1-pi) (g - ratio) + A ratio, with 1 - pi floored at 1e-6."""
    a = np.asarray(a, dtype=np.float64)
    odds = (1.0 - a) * np.minimum(np.asarray(pi) / np.maximum(1.0 - np.asarray(pi), WEIGHT_FLOOR),
                                  1.0 / WEIGHT_FLOOR)
    return odds * (np.asarray(g) - ratio) + a * ratio


def ett(result, dataset: ObservedDataset) -> float:
    """Mean observed outcome of the treated minus psi."""
    return dataset.treated_outcome_mean - result.psi_hat


@dataclass(frozen=True)
class MomentFunctionChoice:
    """User-chosen functions entering the estimating equations.

    Every callable receives a :class:`Design` and, where the function depends
    on the instrument, the instrument value ``z`` (an array, or ``None`` for
    the observed values). ``t`` is evaluated at the observed outcome.

    h1(design, z) -> (n, p1); h2(design) -> (n, p2); t(design) -> (n, q);
    l(design, z) -> (n,); w(design, z) -> (n, q); g(y) -> same shape as y.
    """

    h1: Callable
    h2: Callable
    t: Callable
    l: Callable
    w: Callable
    g: Callable = identity_g

    @classmethod
    def default(cls, spec: ModelSpec) -> MomentFunctionChoice:
        """Regressors of the working models, with l = Z and w = Z times the
        non-Y0 part of each selection term (plain Z when alpha = eta * Y0)."""
        h1_terms = tuple(t for t in spec.propensity_terms if t.uses("z"))
        h2_terms = tuple(t for t in spec.propensity_terms
                         if not t.uses("z") and t.factors != ("1",))
        w_terms = tuple(Term(tuple(f for f in t.factors if f != "y0") + ("z",))
                        for t in spec.selection_terms)

        def h1(design, z=None):
            return build_design(design.dataset, h1_terms, z_override=z)

        def h2(design):
            return build_design(design.dataset, h2_terms)

        def t(design):
            return design.sel_y

        def l(design, z=None):
            return design.dataset.z if z is None else np.broadcast_to(
                np.asarray(z, dtype=np.float64), (design.n,))

        def w(design, z=None):
            return build_design(design.dataset, w_terms, z_override=z)

        return cls(h1, h2, t, l, w)


class Design:
    """Design matrices of one dataset under one model spec."""

    def __init__(self, dataset: ObservedDataset, spec: ModelSpec, *, check=True):
        if check:
            validate(dataset)
            bad = np.flatnonzero((dataset.z != 0) & (dataset.z != 1))
            if bad.size:
                raise NonBinaryFlag("instrument must be binary")
        self.dataset = dataset
        self.spec = spec
        self.n = dataset.n
        self.a = dataset.a
        self.y = dataset.y
        self.z = dataset.z
        self.untreated = dataset.a == 0
        self.x_rho = build_design(dataset, spec.instrument_terms)
        self.x_beta = build_design(dataset, spec.propensity_terms)
        self.x_xi = build_design(dataset, spec.outcome_terms)
        self.sel_y = build_design(dataset, spec.selection_terms, y0_override=dataset.y)
        self.sel_1 = build_design(dataset, spec.selection_terms, y0_override=1.0)

    def weights(self, theta, eta) -> np.ndarray:
        """(1-A)/(1-pi(Y, Z, C)) with 1 - pi floored at 1e-6."""
        lin = self.x_beta @ theta + self.sel_y @ eta
        return kernels.untreated_weights(np.ascontiguousarray(lin), self.a, WEIGHT_FLOOR)

    def pz(self, rho) -> np.ndarray:
        return kernels.expit(np.ascontiguousarray(self.x_rho @ rho))

    def cond_mean_z(self, f, pz) -> np.ndarray:
        """E{f(Z, C) | C} for binary Z; ``f(z)`` returns an array per record."""
        f1 = np.asarray(f(np.ones(self.n)), dtype=np.float64)
        f0 = np.asarray(f(np.zeros(self.n)), dtype=np.float64)
        pz = pz if f1.ndim == 1 else pz[:, None]
        return f1 * pz + f0 * (1.0 - pz)


class Layout:
    """Named blocks of a stacked parameter vector."""

    def __init__(self, blocks):
        self.names = [b[0] for b in blocks]
        self.sizes = [int(b[1]) for b in blocks]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def slice(self, name) -> slice:
        i = self.names.index(name)
        return slice(self.offsets[i], self.offsets[i + 1])

    def unpack(self, x) -> dict:
        return {nm: x[self.slice(nm)] for nm in self.names}

    def pack(self, parts: dict) -> np.ndarray:
        return np.concatenate([np.atleast_1d(np.asarray(parts[nm], dtype=np.float64))
                               for nm in self.names])

    def labels(self) -> list:
        out = []
        for nm, k in zip(self.names, self.sizes):
            out += [nm] if k == 1 and nm in ("pa", "psi", "nu") else [f"{nm}[{j}]" for j in range(k)]
        return out


@dataclass(frozen=True)
class EstimationResult:
    """Point estimates, sandwich standard errors and solver diagnostics."""

    eta_hat: np.ndarray
    psi_hat: float
    ett_hat: float
    se_eta: np.ndarray
    se_psi: float
    se_ett: float
    estimator_kind: str
    diagnostics: dict
    params: dict = field(default_factory=dict)
    param_se: dict = field(default_factory=dict)
    cov: Optional[np.ndarray] = None

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", False))

    def to_dict(self) -> dict:
        def arr(v):
            return [float(x) for x in np.atleast_1d(v)]
        return {
            "estimator": self.estimator_kind,
            "eta": arr(self.eta_hat), "se_eta": arr(self.se_eta),
            "psi": float(self.psi_hat), "se_psi": float(self.se_psi),
            "ett": float(self.ett_hat), "se_ett": float(self.se_ett),
            "params": {k: arr(v) for k, v in self.params.items()},
            "param_se": {k: arr(v) for k, v in self.param_se.items()},
            "diagnostics": {k: (v if isinstance(v, (bool, int, str)) or v is None else float(v))
                            for k, v in self.diagnostics.items()},
        }


def check_choice(choice: MomentFunctionChoice, design: Design, kind: str):
    """Confirm the moment functions give a square system."""
    sp = design.spec.dims
    q = sp["eta"]
    p1 = np.asarray(choice.h1(design)).reshape(design.n, -1).shape[1]
    p2 = np.asarray(choice.h2(design)).reshape(design.n, -1).shape[1]
    if 1 + p1 + p2 != sp["theta"]:
        raise PreconditionError(
            f"{1 + p1 + p2} propensity equations for {sp['theta']} theta parameters")
    if kind == "ipw":
        nt = np.asarray(choice.t(design)).reshape(design.n, -1).shape[1]
        if nt != q:
            raise PreconditionError(f"t has {nt} columns for {q} selection parameters")
    else:
        nw = np.asarray(choice.w(design)).reshape(design.n, -1).shape[1]
        if nw != q:
            raise PreconditionError(f"w has {nw} columns for {q} selection parameters")


def as_columns(x, n) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(n, -1)


def finish(kind, layout: Layout, x_hat, cov, diagnostics, dataset, keep) -> EstimationResult:
    """Assemble an EstimationResult from a stacked solution and its covariance."""
    parts = layout.unpack(x_hat)
    se_all = np.sqrt(np.clip(np.diag(cov), 0.0, None)) if cov is not None else \
        np.full(layout.dim, np.nan)
    ses = {nm: se_all[layout.slice(nm)] for nm in layout.names}
    psi = float(parts["psi"][0])
    if cov is not None:
        i_psi = layout.slice("psi").start
        i_nu = layout.slice("nu").start
        v = cov[i_nu, i_nu] + cov[i_psi, i_psi] - 2.0 * cov[i_nu, i_psi]
        se_ett = float(np.sqrt(max(v, 0.0)))
    else:
        se_ett = float("nan")
    return EstimationResult(
        eta_hat=np.array(parts.get("eta", np.zeros(0))), psi_hat=psi,
        ett_hat=dataset.treated_outcome_mean - psi,
        se_eta=ses.get("eta", np.zeros(0)), se_psi=float(ses["psi"][0]), se_ett=se_ett,
        estimator_kind=kind, diagnostics=diagnostics,
        params={k: np.array(parts[k]) for k in keep if k in parts},
        param_se={k: ses[k] for k in keep if k in ses}, cov=cov)

