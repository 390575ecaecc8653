"""Simulation designs, truth oracles and the Monte Carlo driver."""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.special import expit, roots_hermitenorm

from .core import ModelSpec, ObservedDataset
from .errors import IvettError, MismatchedRuns
from .estimators import estimate_efficient, estimate_ipw, estimate_or, fit_dr
from .rng import DOMAIN_DATA, DOMAIN_ORACLE, derive_seed, std_normal, uniforms

ORACLE_SEED = 20240607
ORACLE_DRAWS = 10_000_000
Z_95 = 1.96
ESTIMATOR_ORDER = ("ipw", "or", "dr", "eff")


@dataclass(frozen=True)
class DgpSpec:
    """Generating coefficients.

    C1 ~ Bernoulli(p_c1), C2 ~ Bernoulli(p_c2); logit Pr(Z=1|C) = z_coef . (1, C1, C2);
    Y0 and Y1 have linear predictors y0_coef . (1, C1, C2) and y1_coef . (1, C1, C2),
    used as logits (binary) or Gaussian means with sd y0_sd / y1_sd (continuous);
    logit Pr(A=1|Y0,Z,C) = a_coef . (1, Z, C1, C2, Y0, C1 Z).
    """

    kind: str = "binary"
    p_c1: float = 0.4
    p_c2: float = 0.6
    z_coef: tuple = (0.2, 0.4, -0.5)
    y0_coef: tuple = (0.6, 0.8, -2.0)
    y1_coef: tuple = (0.7, -0.3, 0.0)
    a_coef: tuple = (0.4, 2.0, 0.8, 0.0, -0.6, -1.6)
    y0_sd: float = 1.0
    y1_sd: float = 1.0

    def __post_init__(self):
        if self.kind not in ("binary", "continuous"):
            raise ValueError(f"unknown DGP kind {self.kind!r}")
        for name in ("z_coef", "y0_coef", "y1_coef", "a_coef"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != (6 if name == "a_coef" else 3) or not all(map(math.isfinite, v)):
                raise ValueError(f"{name} must hold finite coefficients")
            object.__setattr__(self, name, v)

    @classmethod
    def binary(cls, **overrides) -> DgpSpec:
        return cls(**overrides)

    @classmethod
    def continuous(cls, **overrides) -> DgpSpec:
        base = dict(kind="continuous", z_coef=(0.7, 0.8, -1.0), y0_coef=(0.5, 1.0, 3.0),
                    y1_coef=(1.1, -1.3, 0.0), a_coef=(-0.2, -3.0, -3.0, 0.0, 0.3, 4.0))
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> DgpSpec:
        d = dict(d)
        kind = d.pop("kind", "binary")
        return cls.binary(**d) if kind == "binary" else cls.continuous(**d)

    def treatment_logit(self, y0, z, c1, c2):
        b = self.a_coef
        return b[0] + b[1] * z + b[2] * c1 + b[3] * c2 + b[4] * y0 + b[5] * c1 * z


def _lin3(coef, c1, c2):
    return coef[0] + coef[1] * c1 + coef[2] * c2


def generate_full(dgp: DgpSpec, n: int, seed: int) -> dict:
    """All variables, latent potential outcomes included, for records 0..n-1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    u = uniforms(seed, DOMAIN_DATA, n, nblocks=2)
    c1 = (u[:, 0] < dgp.p_c1).astype(np.float64)
    c2 = (u[:, 1] < dgp.p_c2).astype(np.float64)
    z = (u[:, 2] < expit(_lin3(dgp.z_coef, c1, c2))).astype(np.float64)
    if dgp.kind == "binary":
        y0 = (u[:, 3] < expit(_lin3(dgp.y0_coef, c1, c2))).astype(np.float64)
        y1 = (u[:, 4] < expit(_lin3(dgp.y1_coef, c1, c2))).astype(np.float64)
    else:
        y0 = _lin3(dgp.y0_coef, c1, c2) + dgp.y0_sd * std_normal(u[:, 3], u[:, 4])
        y1 = _lin3(dgp.y1_coef, c1, c2) + dgp.y1_sd * std_normal(u[:, 5], u[:, 6])
    a = (u[:, 7] < expit(dgp.treatment_logit(y0, z, c1, c2))).astype(np.float64)
    y = y0 * (1.0 - a) + y1 * a
    return {"a": a, "y": y, "z": z, "c1": c1, "c2": c2, "y0": y0, "y1": y1}


def generate(dgp: DgpSpec, n: int, seed: int) -> ObservedDataset:
    """Observed records (A, Y, Z, C1, C2) of the design, reproducible per record."""
    v = generate_full(dgp, n, seed)
    return ObservedDataset(v["a"], v["y"], v["z"], np.column_stack([v["c1"], v["c2"]]),
                           dgp.kind)


def _cells():
    for c1 in (0.0, 1.0):
        for c2 in (0.0, 1.0):
            for z in (0.0, 1.0):
                yield c1, c2, z


def _cell_weight(dgp, c1, c2, z):
    pc = (dgp.p_c1 if c1 else 1 - dgp.p_c1) * (dgp.p_c2 if c2 else 1 - dgp.p_c2)
    pz1 = expit(_lin3(dgp.z_coef, c1, c2))
    return pc * (pz1 if z else 1 - pz1)


def true_psi_enumeration(dgp: DgpSpec) -> float:
    """E(Y0 | A=1) by exact summation over the 16 (C1, C2, Z, Y0) cells."""
    if dgp.kind != "binary":
        raise ValueError("enumeration needs a binary outcome")
    num = den = 0.0
    for c1, c2, z in _cells():
        w = _cell_weight(dgp, c1, c2, z)
        p1 = expit(_lin3(dgp.y0_coef, c1, c2))
        for y0, py in ((0.0, 1 - p1), (1.0, p1)):
            pa = expit(dgp.treatment_logit(y0, z, c1, c2))
            num += w * py * pa * y0
            den += w * py * pa
    return num / den


def true_psi_quadrature(dgp: DgpSpec, nodes: int = 80) -> float:
    """E(Y0 | A=1) for the Gaussian design by Gauss-Hermite quadrature per cell."""
    x, wts = roots_hermitenorm(nodes)
    wts = wts / wts.sum()
    num = den = 0.0
    for c1, c2, z in _cells():
        w = _cell_weight(dgp, c1, c2, z)
        y0 = _lin3(dgp.y0_coef, c1, c2) + dgp.y0_sd * x
        pa = expit(dgp.treatment_logit(y0, z, c1, c2))
        num += w * np.sum(wts * pa * y0)
        den += w * np.sum(wts * pa)
    return float(num / den)


@lru_cache(maxsize=16)
def true_psi_monte_carlo(dgp: DgpSpec, draws: int = ORACLE_DRAWS,
                         seed: int = ORACLE_SEED) -> tuple:
    """(value, se) of E(Y0 | A=1) from ``draws`` simulated records.

    Uses E{Y0 pi(Y0, Z, C)} / E{pi(Y0, Z, C)} with the exact treatment
    probabilities, evaluated in chunks of 10^6 records.
    """
    chunk = 1_000_000
    s_num = s_den = 0.0
    s_nn = s_dd = s_nd = 0.0
    for start in range(0, draws, chunk):
        m = min(chunk, draws - start)
        u = uniforms(seed, DOMAIN_ORACLE, m, nblocks=1, start=start)
        c1 = (u[:, 0] < dgp.p_c1).astype(np.float64)
        c2 = (u[:, 1] < dgp.p_c2).astype(np.float64)
        z = (u[:, 2] < expit(_lin3(dgp.z_coef, c1, c2))).astype(np.float64)
        if dgp.kind == "binary":
            y0 = (u[:, 3] < expit(_lin3(dgp.y0_coef, c1, c2))).astype(np.float64)
        else:
            u2 = uniforms(seed, DOMAIN_ORACLE, m, nblocks=2, start=start)[:, 4]
            y0 = _lin3(dgp.y0_coef, c1, c2) + dgp.y0_sd * std_normal(u[:, 3], u2)
        pa = expit(dgp.treatment_logit(y0, z, c1, c2))
        num = y0 * pa
        s_num += num.sum()
        s_den += pa.sum()
        s_nn += (num * num).sum()
        s_dd += (pa * pa).sum()
        s_nd += (num * pa).sum()
    mn, md = s_num / draws, s_den / draws
    vn, vd = s_nn / draws - mn ** 2, s_dd / draws - md ** 2
    cnd = s_nd / draws - mn * md
    ratio = mn / md
    var = (vn - 2 * ratio * cnd + ratio ** 2 * vd) / md ** 2 / draws
    return float(ratio), float(math.sqrt(max(var, 0.0)))


def true_psi(dgp: DgpSpec) -> float:
    """Exact enumeration for binary outcomes; the fixed-seed 10^7-draw Monte
    Carlo oracle for continuous outcomes (see :func:`true_psi_monte_carlo`)."""
    if dgp.kind == "binary":
        return true_psi_enumeration(dgp)
    return true_psi_monte_carlo(dgp)[0]


INSTRUMENT_TERMS = ("1", "c1", "c2")
PROPENSITY_CORRECT = ("1", "z", "c1", "c1*z")
PROPENSITY_MISSPECIFIED = ("1", "z", "c1")
OUTCOME_CORRECT = {
    "binary": ("1", "c1", "c2", "z", "c1*z"),
    "continuous": ("1", "c1", "c2", "z", "c1*z", "c2*z", "c1*c2", "c1*c2*z"),
}
OUTCOME_MISSPECIFIED = ("1", "c1", "z")
SCENARIOS = ("i", "ii", "iii")


def scenario_spec(scenario: str, kind: str = "binary") -> ModelSpec:
    """Working models: (i) both correct, (ii) outcome model misspecified,
    (iii) propensity model without the C1 Z term."""
    if scenario not in SCENARIOS:
        raise ValueError(f"scenario must be one of {SCENARIOS}")
    prop = PROPENSITY_MISSPECIFIED if scenario == "iii" else PROPENSITY_CORRECT
    out = OUTCOME_MISSPECIFIED if scenario == "ii" else OUTCOME_CORRECT[kind]
    return ModelSpec(INSTRUMENT_TERMS, prop, out)


@dataclass(frozen=True)
class RepRecord:
    rep: int
    estimator: str
    estimate: float
    se: float
    eta: float
    se_eta: float
    converged: bool
    error: str = ""


def _nan_record(rep, est, msg):
    nan = float("nan")
    return RepRecord(rep, est, nan, nan, nan, nan, False, msg)


def _from_result(rep, est, res) -> RepRecord:
    eta = float(res.eta_hat[0]) if len(res.eta_hat) else float("nan")
    se_eta = float(res.se_eta[0]) if len(res.se_eta) else float("nan")
    ok = bool(res.converged and math.isfinite(res.psi_hat) and math.isfinite(res.se_psi))
    return RepRecord(rep, est, float(res.psi_hat), float(res.se_psi), eta, se_eta, ok,
                     "" if ok else str(res.diagnostics.get("status", "not converged")))


def run_replication(dgp: DgpSpec, spec: ModelSpec, n: int, seed: int, rep: int,
                    estimators: Sequence[str]) -> list:
    """One replication: generate, then run each estimator; failures become records."""
    ds = generate(dgp, n, seed)
    out = []
    dr_fit = None
    for est in ESTIMATOR_ORDER:
        if est not in estimators:
            continue
        try:
            if est == "ipw":
                res = estimate_ipw(ds, spec)
            elif est == "or":
                res = estimate_or(ds, spec)
            elif est == "dr":
                dr_fit = fit_dr(ds, spec)
                res = dr_fit.result
            else:
                if dr_fit is None:
                    dr_fit = fit_dr(ds, spec, with_se=False)
                res = estimate_efficient(ds, spec, dr_fit=dr_fit)
            out.append(_from_result(rep, est, res))
        except (IvettError, ArithmeticError, ValueError) as exc:
            out.append(_nan_record(rep, est, f"{type(exc).__name__}: {exc}"))
    return out


def _run_chunk(args):
    dgp, spec_dict, n, master_seed, reps, estimators = args
    spec = ModelSpec.from_dict(spec_dict)
    out = []
    for r in reps:
        out += run_replication(dgp, spec, n, derive_seed(master_seed, r), r, estimators)
    return out


@dataclass(frozen=True)
class EstimatorSummary:
    mean_bias: float
    mc_sd: float
    mean_se: float
    median_se: float
    coverage: float
    failures: int
    successes: int


def _summarise(records, psi_true) -> EstimatorSummary:
    ok = [r for r in records if r.converged]
    fails = len(records) - len(ok)
    if not ok:
        nan = float("nan")
        return EstimatorSummary(nan, nan, nan, nan, nan, fails, 0)
    est = np.array([r.estimate for r in ok])
    se = np.array([r.se for r in ok])
    cover = np.abs(est - psi_true) <= Z_95 * se
    sd = float(est.std(ddof=1)) if len(ok) > 1 else float("nan")
    return EstimatorSummary(float(est.mean() - psi_true), sd, float(se.mean()),
                            float(np.median(se)), float(cover.mean()), fails, len(ok))


@dataclass(frozen=True)
class McSummary:
    """Per-estimator summaries plus every replication record."""

    kind: str
    scenario: str
    n: int
    master_seed: int
    psi_true: float
    estimators: tuple
    records: tuple
    dgp: dict = field(default_factory=dict)

    @property
    def reps(self) -> int:
        return len({r.rep for r in self.records})

    @property
    def per_estimator(self) -> dict:
        return {e: _summarise([r for r in self.records if r.estimator == e], self.psi_true)
                for e in self.estimators}

    def values(self, estimator: str, field_name: str = "estimate") -> dict:
        return {r.rep: getattr(r, field_name) for r in self.records
                if r.estimator == estimator and r.converged}

    def merge(self, other: McSummary) -> McSummary:
        if (self.kind, self.scenario, self.n, self.master_seed, self.estimators) != \
                (other.kind, other.scenario, other.n, other.master_seed, other.estimators):
            raise MismatchedRuns("runs differ in design, scenario, n, seed or estimators")
        overlap = {r.rep for r in self.records} & {r.rep for r in other.records}
        if overlap:
            raise MismatchedRuns(f"replication indices overlap, e.g. {min(overlap)}")
        recs = tuple(sorted(self.records + other.records,
                            key=lambda r: (r.rep, ESTIMATOR_ORDER.index(r.estimator))))
        return replace(self, records=recs)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scenario": self.scenario, "n": self.n,
                "master_seed": self.master_seed, "psi_true": self.psi_true,
                "replications": self.reps, "dgp": self.dgp,
                "estimators": {e: asdict(s) for e, s in self.per_estimator.items()}}

    def records_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rep", "estimator", "estimate", "se", "eta", "se_eta", "converged", "error"])
        for r in self.records:
            w.writerow([r.rep, r.estimator, _fmt(r.estimate), _fmt(r.se), _fmt(r.eta),
                        _fmt(r.se_eta), int(r.converged), r.error])
        return buf.getvalue()


def _fmt(x: float) -> str:
    return "" if not math.isfinite(x) else repr(float(x))


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity")
               else (os.cpu_count() or 1))


def run_mc(dgp: DgpSpec, scenario: str, n: int, reps: int, master_seed: int,
           estimators: Iterable[str] = ("ipw", "or", "dr"), *, rep_offset: int = 0,
           workers: Optional[int] = 1, spec: Optional[ModelSpec] = None) -> McSummary:
    """Monte Carlo study of replications rep_offset .. rep_offset + reps - 1.

    Replication r uses seed ``derive_seed(master_seed, r)``; results do not
    depend on ``workers``. Non-converged replications are recorded and excluded
    from the coverage denominator.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    estimators = tuple(e for e in ESTIMATOR_ORDER if e in set(estimators))
    unknown = set(estimators) - set(ESTIMATOR_ORDER)
    if unknown:
        raise ValueError(f"unknown estimators {sorted(unknown)}")
    spec = spec or scenario_spec(scenario, dgp.kind)
    idx = list(range(rep_offset, rep_offset + reps))
    workers = workers or default_workers()
    if workers <= 1 or reps == 1:
        records = _run_chunk((dgp, spec.to_dict(), n, master_seed, idx, estimators))
    else:
        chunks = [idx[i::workers] for i in range(workers) if idx[i::workers]]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = pool.map(_run_chunk, [(dgp, spec.to_dict(), n, master_seed, c, estimators)
                                          for c in chunks])
            records = [r for p in parts for r in p]
    records = tuple(sorted(records, key=lambda r: (r.rep, ESTIMATOR_ORDER.index(r.estimator))))
    return McSummary(dgp.kind, scenario, int(n), int(master_seed), float(true_psi(dgp)),
                     estimators, records, dgp.to_dict())


def relative_efficiency(summary_dr: McSummary, summary_eff: McSummary) -> dict:
    """Monte Carlo variance ratios eff / DR for eta and psi over common replications.

    ``re_eta`` and ``re_psi`` compare the spread of the estimates. The
    ``*_sandwich`` entries compare mean squared sandwich standard errors over
    the same replications, i.e. the estimated asymptotic variances.
    """
    keys = ("kind", "scenario", "n", "master_seed")
    if any(getattr(summary_dr, k) != getattr(summary_eff, k) for k in keys):
        raise MismatchedRuns("summaries come from different designs, sizes or seeds")
    out = {}
    for label, fld, se_fld in (("re_eta", "eta", "se_eta"), ("re_psi", "estimate", "se")):
        dr = summary_dr.values("dr", fld)
        ef = summary_eff.values("eff", fld)
        common = sorted(set(dr) & set(ef))
        if len(common) < 2:
            raise MismatchedRuns("fewer than two replications shared by both estimators")
        v_dr = np.var([dr[r] for r in common], ddof=1)
        v_ef = np.var([ef[r] for r in common], ddof=1)
        out[label] = float(v_ef / v_dr)
        s_dr = summary_dr.values("dr", se_fld)
        s_ef = summary_eff.values("eff", se_fld)
        both = [r for r in common if r in s_dr and r in s_ef
                and math.isfinite(s_dr[r]) and math.isfinite(s_ef[r])]
        out[label + "_sandwich"] = float(np.mean([s_ef[r] ** 2 for r in both]) /
                                         np.mean([s_dr[r] ** 2 for r in both])) \
            if both else float("nan")
    return out


def write_outputs(summary: McSummary, out_dir: str, stem: str = "mc") -> tuple:
    """Write ``<stem>_replications.csv`` and ``<stem>_summary.json``."""
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{stem}_replications.csv")
    json_path = os.path.join(out_dir, f"{stem}_summary.json")
    with open(csv_path, "w", newline="") as fh:
        fh.write(summary.records_csv())
    with open(json_path, "w") as fh:
        fh.write(dumps_json(summary.to_dict()))
    return csv_path, json_path


def _clean(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps_json(obj) -> str:
    """Canonical JSON: sorted keys, two-space indent, non-finite numbers as null."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"
