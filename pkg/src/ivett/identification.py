"""Exact discrete laws and identification checks for binary instruments.

A :class:`DiscreteJointLaw` holds Pr(C), Pr(Z=1|C), Pr(Y0|C) and
Pr(A=1|Y0,Z,C) over finitely many covariate cells and Y0 levels. Because Y0
is drawn from Pr(Y0|C) alone, the instrument is independent of Y0 given C by
construction.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, logit, ndtr, ndtri

from .errors import InvalidWitness


@dataclass(frozen=True, eq=False)
class DiscreteJointLaw:
    """Joint law of (C, Z, Y0, A) with K covariate cells and L outcome levels.

    Attributes
    ----------
    pc : (K,) Pr(C = cell k)
    pz1 : (K,) Pr(Z=1 | C)
    py0 : (K, L) Pr(Y0 = levels[l] | C)
    pa1 : (K, 2, L) Pr(A=1 | Y0 = levels[l], Z = z, C)
    levels : (L,) outcome values
    """

    pc: np.ndarray
    pz1: np.ndarray
    py0: np.ndarray
    pa1: np.ndarray
    levels: np.ndarray = None

    def __post_init__(self):
        pc = np.atleast_1d(np.asarray(self.pc, dtype=np.float64))
        pz1 = np.atleast_1d(np.asarray(self.pz1, dtype=np.float64))
        py0 = np.atleast_2d(np.asarray(self.py0, dtype=np.float64))
        pa1 = np.asarray(self.pa1, dtype=np.float64)
        if pa1.ndim == 2:
            pa1 = pa1[None]
        k, nl = py0.shape
        levels = np.arange(nl, dtype=np.float64) if self.levels is None else \
            np.asarray(self.levels, dtype=np.float64)
        if pc.shape != (k,) or pz1.shape != (k,) or pa1.shape != (k, 2, nl) or \
                levels.shape != (nl,):
            raise ValueError("component shapes do not conform")
        for name, v in (("pc", pc), ("pz1", pz1), ("py0", py0), ("pa1", pa1)):
            if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must hold probabilities")
        if abs(pc.sum() - 1.0) > 1e-12 or np.any(np.abs(py0.sum(axis=1) - 1.0) > 1e-12):
            raise ValueError("Pr(C) and Pr(Y0|C) must each sum to 1")
        for name, v in (("pc", pc), ("pz1", pz1), ("py0", py0), ("pa1", pa1),
                        ("levels", levels)):
            v.flags.writeable = False
            object.__setattr__(self, name, v)

    @property
    def shape(self):
        return self.py0.shape

    def table(self) -> np.ndarray:
        """Pr(C=k, Z=z, Y0=l, A=a) as a (K, 2, L, 2) array."""
        pz = np.stack([1.0 - self.pz1, self.pz1], axis=1)
        base = self.pc[:, None, None] * pz[:, :, None] * self.py0[:, None, :]
        return np.stack([base * (1.0 - self.pa1), base * self.pa1], axis=-1)

    def total_variation(self, other: DiscreteJointLaw) -> float:
        return 0.5 * float(np.abs(self.table() - other.table()).sum())

    def psi(self) -> float:
        """E(Y0 | A=1)."""
        t = self.table()[..., 1]
        return float((t * self.levels[None, None, :]).sum() / t.sum())

    def cond_y0_given_a(self, a: int) -> np.ndarray:
        """Pr(Y0 = l | A=a, Z=z, C=k) as (K, 2, L)."""
        t = self.table()[..., a]
        return t / t.sum(axis=2, keepdims=True)


@dataclass(frozen=True)
class ObservedLaw:
    """Pr(A=0, Y=y, Z=z, C=k) as p_a0 (K, L, 2) and Pr(A=1, Z=z, C=k) as p_a1 (K, 2)."""

    p_a0: np.ndarray
    p_a1: np.ndarray
    levels: np.ndarray

    def distance(self, other: ObservedLaw) -> float:
        """Largest absolute difference over all observable cells."""
        return float(max(np.abs(self.p_a0 - other.p_a0).max(),
                         np.abs(self.p_a1 - other.p_a1).max()))

    @property
    def total(self) -> float:
        return float(self.p_a0.sum() + self.p_a1.sum())


def observed_law(law: DiscreteJointLaw) -> ObservedLaw:
    """Drop Y0 where it is unobserved: keep (Y0=Y, Z) for A=0, only Z for A=1."""
    t = law.table()
    return ObservedLaw(np.transpose(t[..., 0], (0, 2, 1)).copy(), t[..., 1].sum(axis=2),
                       law.levels.copy())


def random_law(rng: np.random.Generator, k: int = 3, levels: Iterable = (0.0, 1.0),
               floor: float = 0.02) -> DiscreteJointLaw:
    """A random law with every probability at least ``floor`` away from 0 and 1."""
    levels = np.asarray(list(levels), dtype=np.float64)
    nl = levels.shape[0]
    pc = rng.dirichlet(np.ones(k))
    py0 = rng.dirichlet(np.ones(nl), size=k) * (1 - nl * floor) + floor
    pz1 = rng.uniform(floor, 1 - floor, size=k)
    pa1 = rng.uniform(floor, 1 - floor, size=(k, 2, nl))
    return DiscreteJointLaw(pc, pz1, py0, pa1, levels)


def law_from_dgp(dgp) -> DiscreteJointLaw:
    """The four-cell (C1, C2) law of a binary simulation design."""
    if dgp.kind != "binary":
        raise ValueError("only binary designs have a finite law")
    cells = [(c1, c2) for c1 in (0.0, 1.0) for c2 in (0.0, 1.0)]
    pc, pz1, py0, pa1 = [], [], [], []
    for c1, c2 in cells:
        pc.append((dgp.p_c1 if c1 else 1 - dgp.p_c1) * (dgp.p_c2 if c2 else 1 - dgp.p_c2))
        pz1.append(expit(dgp.z_coef[0] + dgp.z_coef[1] * c1 + dgp.z_coef[2] * c2))
        p1 = expit(dgp.y0_coef[0] + dgp.y0_coef[1] * c1 + dgp.y0_coef[2] * c2)
        py0.append([1 - p1, p1])
        pa1.append([[expit(dgp.treatment_logit(y, z, c1, c2)) for y in (0.0, 1.0)]
                    for z in (0.0, 1.0)])
    return DiscreteJointLaw(np.array(pc), np.array(pz1), np.array(py0), np.array(pa1))


def selection_bias(law: DiscreteJointLaw) -> np.ndarray:
    """alpha(y, z, c) = log-odds of treatment at Y0=y minus that at the first level, (K, 2, L)."""
    lo = np.log(law.pa1) - np.log1p(-law.pa1)
    return lo - lo[:, :, :1]


def moment_identity_sides(law: DiscreteJointLaw, g: Callable) -> tuple:
    """Both sides of E{g(Y0)|A=1,Z,C} = E[e^alpha g(Y)|A=0,Z,C] / E[e^alpha|A=0,Z,C].

    The left side comes from Bayes' rule on the joint table; the right side
    from the untreated outcome law and the treatment odds. Each is (K, 2).
    """
    gv = np.asarray(g(law.levels), dtype=np.float64)
    lhs = (law.cond_y0_given_a(1) * gv).sum(axis=2)
    f0 = law.cond_y0_given_a(0)
    e = np.exp(selection_bias(law))
    rhs = (f0 * e * gv).sum(axis=2) / (f0 * e).sum(axis=2)
    return lhs, rhs


# ---------------------------------------------------------------------------
# two-level toy model without covariates
#   Pr(A=0 | Y0, Z) = link^-1(theta1 + theta2 Z + eta1 Y0 + eta2 Y0 Z),
#   Pr(Y0=1) = exp(tau)

LINKS = {"logit": (expit, logit), "probit": (ndtr, ndtri)}


def toy_law(theta1, theta2, eta1, eta2, tau, pz: float = 0.5,
            link: str = "logit") -> DiscreteJointLaw:
    """Covariate-free binary law of the toy model, Pr(Z=1) = ``pz``."""
    inv = LINKS[link][0]
    p1 = np.exp(tau)
    if not 0.0 < p1 < 1.0:
        raise ValueError("tau must be negative so that Pr(Y0=1) = exp(tau) lies in (0, 1)")
    pa0 = np.array([[inv(theta1 + theta2 * z + eta1 * y + eta2 * y * z) for y in (0, 1)]
                    for z in (0, 1)])
    return DiscreteJointLaw([1.0], [pz], [[1 - p1, p1]], (1.0 - pa0)[None])


def _rho2(tau, rho1):
    return float(np.log(np.exp(-rho1 - tau) + (np.exp(tau) - 1.0) / np.exp(tau)))


def nonidentification_witness(theta1, theta2, eta1, eta2, tau, rho1) -> tuple:
    """A second saturated-logit parameter set with the same observed law.

    Returns (theta1~, theta2~, eta1~, eta2~, tau~). The alternative rescales
    Pr(Y0=0) by exp(rho1) and Pr(Y0=1) by exp(rho1 + rho2).
    """
    if rho1 == 0:
        return (float(theta1), float(theta2), float(eta1), float(eta2), float(tau))
    arg = np.exp(-rho1 - tau) + (np.exp(tau) - 1.0) / np.exp(tau)
    if not arg > 0:
        raise InvalidWitness(f"rho1 = {rho1} leaves no valid Pr(Y0=1) for the alternative")
    rho2 = float(np.log(arg))
    t1, t2, e1, e2 = theta1, theta2, eta1, eta2
    w1 = 1 + np.exp(t1) - np.exp(t1 - rho1)
    w2 = 1 + np.exp(t1 + t2) - np.exp(t1 + t2 - rho1)
    w3 = 1 + np.exp(t1 + e1) - np.exp(t1 + e1 - rho1 - rho2)
    w4 = 1 + np.exp(t1 + t2 + e1 + e2) - np.exp(t1 + t2 + e1 + e2 - rho1 - rho2)
    ws = (w1, w2, w3, w4)
    if min(ws) <= 0:
        raise InvalidWitness(f"rho1 = {rho1}: varpi_{int(np.argmin(ws)) + 1} = {min(ws):.4g} <= 0")
    tau_t = tau + rho1 + rho2
    if not tau_t < 0:
        raise InvalidWitness(f"rho1 = {rho1}: alternative tau {tau_t:.4g} is not negative")
    lw = np.log(ws)
    return (float(t1 - rho1 - lw[0]), float(t2 + lw[0] - lw[1]),
            float(e1 - rho2 + lw[0] - lw[2]), float(e2 + lw[1] + lw[2] - lw[0] - lw[3]),
            float(tau_t))


@dataclass(frozen=True)
class Certificate:
    unique: bool
    best_alternative_distance: float
    preimages: tuple
    truth: tuple


def _cell_probs(ol: ObservedLaw):
    """q[y, z] = Pr(A=0, Y0=y | Z=z) and Pr(Z=z), for a covariate-free law."""
    pz = ol.p_a0[0].sum(axis=0) + ol.p_a1[0]
    return ol.p_a0[0] / pz[None, :], pz


def certify_separable_binary(theta1, theta2, eta1, tau, grid_step: float = 0.05, *,
                             link: str = "logit", bounds=(-5.0, 5.0), saturated: bool = False,
                             eta2: float = 0.0, pz: float = 0.5,
                             threshold: float = 1e-9) -> Certificate:
    """Search for a second parameter vector with the same observed law.

    Fixing the alternative's tau~ pins the alternative's Pr(A=0|y, z) at every
    cell via q_yz / Pr~(Y0=y); the separable model then leaves one scalar
    constraint (the y-by-z interaction on the link scale). tau~ is scanned at
    ``grid_step`` over [bounds[0], 0) and sign changes are refined by root
    finding, so every preimage in the box is found. In the saturated model
    (``saturated=True``) there is no constraint and every admissible tau~ is a
    preimage. ``unique`` is true iff every preimage lies within
    2 * grid_step of the truth (max-norm).

    ``best_alternative_distance`` is the smallest observed-law discrepancy
    (max over cells) among admissible candidates whose tau~ is farther than
    2 * grid_step from tau.
    """
    inv, fwd = LINKS[link]
    truth = (theta1, theta2, eta1, eta2, tau) if saturated else (theta1, theta2, eta1, tau)
    ol = observed_law(toy_law(theta1, theta2, eta1, eta2 if saturated else 0.0, tau, pz, link))
    q, pzs = _cell_probs(ol)
    lo, hi = bounds
    radius = 2.0 * grid_step

    def params(t):
        f = np.array([1.0 - np.exp(t), np.exp(t)])
        x = q / f[:, None]
        if np.any(x <= 0) or np.any(x >= 1):
            return None
        lx = fwd(x)
        th1, th2, e1 = lx[0, 0], lx[0, 1] - lx[0, 0], lx[1, 0] - lx[0, 0]
        inter = lx[1, 1] - lx[1, 0] - lx[0, 1] + lx[0, 0]
        return th1, th2, e1, inter, f

    def constraint(t):
        p = params(t)
        return np.nan if p is None else p[3]

    def candidate(t):
        p = params(t)
        if p is None:
            return None
        th1, th2, e1, inter, f = p
        vec = (th1, th2, e1, inter, t) if saturated else (th1, th2, e1, t)
        if any(v < lo or v > hi for v in vec):
            return None
        return vec

    def discrepancy(t):
        """Observed-law distance of the separable candidate matching three cells."""
        p = params(t)
        if p is None:
            return np.inf
        th1, th2, e1, _, f = p
        return abs(q[1, 1] - f[1] * inv(th1 + th2 + e1)) * pzs[1]

    def far(vec):
        return max(abs(a - b) for a, b in zip(vec, truth)) > radius

    # tau~ is admissible only while every implied Pr~(A=0|y, z) stays below one
    adm_lo = np.log(q[1].max())
    adm_hi = np.log1p(-q[0].max())
    grid = np.arange(lo, 0.0, grid_step)
    pad = 1e-9 * max(1.0, adm_hi - adm_lo)
    grid = np.unique(np.concatenate([
        grid[(grid > adm_lo) & (grid < adm_hi)],
        np.linspace(adm_lo + pad, adm_hi - pad, 9)])) if adm_hi > adm_lo else grid[:0]
    grid = grid[(grid >= lo) & (grid < 0)]
    preimages = []
    best = np.inf
    if saturated:
        for t in grid:
            vec = candidate(t)
            if vec is not None:
                preimages.append(tuple(float(v) for v in vec))
                if abs(t - tau) > radius:
                    best = 0.0
    else:
        vals = np.array([constraint(t) for t in grid])
        for t, v in zip(grid, vals):
            if abs(t - tau) > radius and np.isfinite(v):
                best = min(best, discrepancy(t))
        roots = [float(t) for t, v in zip(grid, vals)
                 if np.isfinite(v) and discrepancy(t) < threshold]
        for i in range(len(grid) - 1):
            a, b = vals[i], vals[i + 1]
            if np.isfinite(a) and np.isfinite(b) and a * b < 0:
                roots.append(brentq(constraint, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14))
        for r in roots:
            vec = candidate(r)
            if vec is not None and discrepancy(r) < threshold:
                preimages.append(tuple(float(v) for v in vec))
                if abs(r - tau) > radius:
                    best = min(best, discrepancy(r))
    preimages = _dedupe(preimages)
    unique = not any(far(p) for p in preimages)
    return Certificate(bool(unique), float(best), tuple(preimages), tuple(map(float, truth)))


def _dedupe(points, tol=1e-8):
    out = []
    for p in points:
        if all(max(abs(a - b) for a, b in zip(p, o)) > tol for o in out):
            out.append(p)
    return out


def certify_separable_levels(theta, f0, h, grid_step: float = 0.01, bounds=(-5.0, 5.0),
                             threshold: float = 1e-9) -> Certificate:
    """Uniqueness check for logit Pr(A=0|Y0,Z) = theta Z + h(Y0) with Y0 on L levels.

    ``f0`` is Pr(Y0 = level l) and ``h`` the per-level intercepts. For a
    candidate theta~ each level's Pr~(Y0=l) follows in closed form from the
    two observed cells of that level; theta~ is a preimage when those
    probabilities are admissible and sum to one.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    q0 = f0 * expit(h)
    q1 = f0 * expit(theta + h)

    def mass(t):
        et = np.exp(t)
        den = q1 - et * q0
        with np.errstate(divide="ignore", invalid="ignore"):
            u = q0 * q1 * (1.0 - et) / den
        if np.any(~np.isfinite(u)) or np.any(u <= np.maximum(q0, q1)) or np.any(u > 1):
            return np.nan
        return float(u.sum() - 1.0)

    grid = np.arange(bounds[0], bounds[1] + grid_step / 2, grid_step)
    grid = grid[np.abs(grid) > grid_step / 2]
    vals = np.array([mass(t) for t in grid])
    roots = []
    for i in range(len(grid) - 1):
        a, b = vals[i], vals[i + 1]
        if np.isfinite(a) and np.isfinite(b) and a * b <= 0:
            roots.append(brentq(mass, grid[i], grid[i + 1], xtol=1e-14) if a * b < 0
                         else float(grid[i] if a == 0 else grid[i + 1]))
    pre = tuple((float(r),) for r in roots if abs(mass(r)) < threshold)
    finite = vals[np.isfinite(vals)]
    radius = 2 * grid_step
    far = [p for p in pre if abs(p[0] - theta) > radius]
    best = float(np.min(np.abs(finite))) if finite.size else np.inf
    return Certificate(not far, 0.0 if far else best, pre, (float(theta),))


def check_condition1_pair(pr1: Callable, pr2: Callable, f1: Callable, f2: Callable,
                          eval_points: Iterable, rtol: float = 1e-10) -> bool:
    """True iff pr1/pr2 differs from f2/f1 at some (y0, z) evaluation point.

    ``pr1``/``pr2`` map (y0, z) to Pr(A=0 | Y0=y0, Z=z); ``f1``/``f2`` map y0
    to its probability. A false return means this pair violates the condition,
    so the two candidates cannot be told apart from observed data.
    """
    for y0, z in eval_points:
        left = pr1(y0, z) / pr2(y0, z)
        right = f2(y0) / f1(y0)
        if abs(left - right) > rtol * max(abs(left), abs(right), 1.0):
            return True
    return False


def witness_report(theta=(0.3, 0.6, 0.1, 0.7), tau=-0.2, rho1=0.3, pz=0.5,
                   grid_step=0.05, separable: Optional[tuple] = None) -> dict:
    """The witness pair, their observed laws and separable-model certificates."""
    out = {"input": {"theta1": theta[0], "theta2": theta[1], "eta1": theta[2],
                     "eta2": theta[3], "tau": tau, "rho1": rho1}}
    try:
        alt = nonidentification_witness(*theta, tau, rho1)
        l1 = toy_law(*theta, tau, pz)
        l2 = toy_law(*alt, pz)
        o1, o2 = observed_law(l1), observed_law(l2)
        out["witness"] = {"alternative": dict(zip(("theta1", "theta2", "eta1", "eta2", "tau"),
                                                  alt)),
                          "rho2": _rho2(tau, rho1),
                          "observed_law_original": {"a0": o1.p_a0[0].tolist(),
                                                    "a1": o1.p_a1[0].tolist()},
                          "observed_law_alternative": {"a0": o2.p_a0[0].tolist(),
                                                       "a1": o2.p_a1[0].tolist()},
                          "observed_distance": o1.distance(o2),
                          "total_variation": l1.total_variation(l2)}
    except InvalidWitness as exc:
        out["witness"] = {"error": "InvalidWitness", "message": str(exc)}
    sep = separable or (theta[0], theta[1], theta[2], tau)
    certs = {}
    for name, kw in (("separable_logit", {}), ("separable_probit", {"link": "probit"}),
                     ("saturated_logit", {"saturated": True, "eta2": theta[3]})):
        c = certify_separable_binary(*sep, grid_step, pz=pz, **kw)
        certs[name] = {"unique": c.unique, "best_alternative_distance": c.best_alternative_distance,
                       "preimages_found": len(c.preimages)}
    out["certificates"] = certs
    return out
