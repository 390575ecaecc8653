"""Untreated-outcome working models and the conditional ratio they imply.

For a record with (Z, C) the ratio is
E[exp{alpha(Y)} g(Y) | A=0, Z, C] / E[exp{alpha(Y)} | A=0, Z, C], which equals
E{g(Y0) | A=1, Z, C}. Binary outcomes use a restricted logistic fit; continuous
outcomes use least-squares fits of g(Y) e^alpha and e^alpha that are refitted
for every trial value of eta.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import PreconditionError, RatioDenominatorNonpositive
from ..glm import fit_logistic
from ..numerics import solve_linear
from ._base import Design, identity_g


class BinaryOutcome:
    kind = "binary"

    def __init__(self, design: Design, g=identity_g):
        self.d = design
        self.g = g
        self.x = design.x_xi
        self.p = design.x_xi.shape[1]
        self.dim = self.p
        if design.untreated.sum() < self.p:
            raise PreconditionError(
                f"{int(design.untreated.sum())} untreated records for {self.p} outcome terms")
        self.fit_result = None

    def fit(self, eta=None):
        """Restricted MLE; does not depend on eta."""
        if self.fit_result is None:
            u = self.d.untreated
            self.fit_result = fit_logistic(self.x[u], self.d.y[u])
        return self.fit_result.coef

    def moments(self, xi, eta):
        mu = kernels.expit(np.ascontiguousarray(self.x @ xi))
        return self.x * ((1.0 - self.d.a) * (self.d.y - mu))[:, None]

    def prob(self, xi):
        return kernels.expit(np.ascontiguousarray(self.x @ xi))

    def ratios(self, xi, eta, strict=True):
        """(ratio for g, ratio for the identity) at every record."""
        p = self.prob(xi)
        alpha1 = np.ascontiguousarray(self.d.sel_1 @ eta) if len(eta) else np.zeros(self.d.n)
        r_y = kernels.binary_ratio(alpha1, p, np.ones(self.d.n), np.zeros(self.d.n))
        if self.g is identity_g:
            return r_y, r_y
        g1 = np.full(self.d.n, float(self.g(1.0)))
        g0 = np.full(self.d.n, float(self.g(0.0)))
        return kernels.binary_ratio(alpha1, p, g1, g0), r_y


class ContinuousOutcome:
    """Profile least-squares fits of g(Y) e^alpha, e^alpha and, when g is not
    the identity, Y e^alpha on the outcome terms among the untreated."""

    kind = "continuous"

    def __init__(self, design: Design, g=identity_g):
        self.d = design
        self.g = g
        self.x = design.x_xi
        self.p = design.x_xi.shape[1]
        self.blocks = 2 if g is identity_g else 3
        self.dim = self.blocks * self.p
        u = design.untreated
        if u.sum() < self.p:
            raise PreconditionError(f"{int(u.sum())} untreated records for {self.p} outcome terms")
        self.xu = self.x[u]
        self.xtx = self.xu.T @ self.xu
        self.yu = design.y[u]
        self.gu = np.asarray(g(self.yu), dtype=np.float64)
        self.g_all = np.asarray(g(design.y), dtype=np.float64)
        self.sel_u = design.sel_y[u]

    def _responses(self, ea, gy, y):
        cols = [gy * ea, ea]
        if self.blocks == 3:
            cols.append(y * ea)
        return np.column_stack(cols)

    def fit(self, eta):
        ea = np.exp(self.sel_u @ eta) if len(eta) else np.ones(self.xu.shape[0])
        resp = self._responses(ea, self.gu, self.yu)
        coef = solve_linear(self.xtx, self.xu.T @ resp)
        return coef.T.reshape(-1)

    def moments(self, xi, eta):
        ea = np.exp(self.d.sel_y @ eta) if len(eta) else np.ones(self.d.n)
        resp = self._responses(ea, self.g_all, self.d.y)
        fitted = self.x @ xi.reshape(self.blocks, self.p).T
        r = (1.0 - self.d.a)[:, None] * (resp - fitted)
        return np.concatenate([self.x * r[:, [j]] for j in range(self.blocks)], axis=1)

    def ratios(self, xi, eta, strict=True):
        fitted = self.x @ xi.reshape(self.blocks, self.p).T
        den = fitted[:, 1]
        if np.any(den <= 0):
            if strict:
                i = int(np.flatnonzero(den <= 0)[0])
                raise RatioDenominatorNonpositive(
                    f"fitted E(exp(alpha)|A=0,Z,C) = {den[i]:.3g} at record {i}")
            den = np.where(den <= 0, np.nan, den)
        r_g = fitted[:, 0] / den
        r_y = r_g if self.blocks == 2 else fitted[:, 2] / den
        return r_g, r_y


def outcome_model(design: Design, g=identity_g):
    if design.dataset.outcome_kind == "binary":
        return BinaryOutcome(design, g)
    return ContinuousOutcome(design, g)
