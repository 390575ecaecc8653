"""Data model, model formulas and design matrices.

Model formulas are lists of *terms*. A term is the intercept ``"1"``, a single
variable (``"z"``, ``"y0"``, ``"c1"``, ``"c2"``, ...) or a product of up to three
factors such as ``"c1*z"``, ``"y0*c2"`` or ``"c1*c2*z"``. Covariates are
numbered from 1.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (BinaryOutcomeViolation, DegenerateArm, InvalidTerm,
                     NonBinaryFlag, RaggedCovariates, UnknownTermIndex)

OUTCOME_KINDS = ("binary", "continuous")

MAX_FACTORS = 3
_FACTOR = re.compile(r"^(1|z|y0|c([1-9][0-9]*))$")


@dataclass(frozen=True)
class Term:
    """A product of at most three factors."""

    factors: tuple[str, ...]

    @classmethod
    def parse(cls, text: str | Term) -> Term:
        if isinstance(text, Term):
            return text
        parts = [p.strip().lower() for p in str(text).split("*")]
        if not 1 <= len(parts) <= MAX_FACTORS:
            raise InvalidTerm(f"term {text!r}: at most {MAX_FACTORS} factors are supported")
        for p in parts:
            if not _FACTOR.match(p):
                raise InvalidTerm(f"term {text!r}: unknown factor {p!r}")
        if len(parts) > 1:
            parts = [p for p in parts if p != "1"] or ["1"]
        return cls(tuple(parts))

    @property
    def label(self) -> str:
        return "*".join(self.factors)

    def uses(self, name: str) -> bool:
        return name in self.factors

    @property
    def covariate_indices(self) -> tuple[int, ...]:
        return tuple(int(f[1:]) for f in self.factors if f.startswith("c"))

    def __str__(self) -> str:
        return self.label


def parse_terms(terms: Iterable[str | Term]) -> tuple[Term, ...]:
    return tuple(Term.parse(t) for t in terms)


def _readonly(x: np.ndarray) -> np.ndarray:
    x.flags.writeable = False
    return x


@dataclass(frozen=True, eq=False)
class ObservedDataset:
    """n records of (treatment a, outcome y, instrument z, covariates c)."""

    a: np.ndarray
    y: np.ndarray
    z: np.ndarray
    c: np.ndarray = None
    outcome_kind: str = "binary"

    def __post_init__(self):
        a = np.array(self.a, dtype=np.float64).reshape(-1)
        y = np.array(self.y, dtype=np.float64).reshape(-1)
        z = np.array(self.z, dtype=np.float64).reshape(-1)
        n = a.shape[0]
        if self.c is None:
            c = np.zeros((n, 0))
        else:
            try:
                c = np.array(self.c, dtype=np.float64)
            except ValueError as exc:
                raise RaggedCovariates("covariate rows have different widths") from exc
            if c.ndim == 1:
                c = c.reshape(n, -1) if n else c.reshape(0, 0)
            if c.ndim != 2:
                raise RaggedCovariates("covariates must form an n x k matrix")
        if not (y.shape[0] == n and z.shape[0] == n and c.shape[0] == n):
            raise RaggedCovariates(
                f"column lengths differ: a={n}, y={y.shape[0]}, z={z.shape[0]}, c={c.shape[0]}")
        if self.outcome_kind not in OUTCOME_KINDS:
            raise ValueError(f"outcome_kind must be one of {OUTCOME_KINDS}")
        for name, arr in (("a", a), ("y", y), ("z", z), ("c", c)):
            object.__setattr__(self, name, _readonly(arr))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def k(self) -> int:
        return self.c.shape[1]

    @property
    def treated_fraction(self) -> float:
        return float(self.a.mean())

    @property
    def treated_outcome_mean(self) -> float:
        return float(self.y[self.a == 1].mean())

    def subset(self, mask) -> ObservedDataset:
        mask = np.asarray(mask)
        return ObservedDataset(self.a[mask], self.y[mask], self.z[mask], self.c[mask],
                               self.outcome_kind)


def validate(dataset: ObservedDataset) -> None:
    """Raise if the dataset breaks an invariant; return None otherwise."""
    if dataset.n < 1:
        raise DegenerateArm("dataset is empty")
    for name in ("a", "z"):
        col = getattr(dataset, name)
        bad = np.flatnonzero((col != 0) & (col != 1))
        if bad.size:
            raise NonBinaryFlag(f"{name} must be 0/1; record {int(bad[0])} has {col[bad[0]]!r}")
    if dataset.outcome_kind == "binary":
        bad = np.flatnonzero((dataset.y != 0) & (dataset.y != 1))
        if bad.size:
            raise BinaryOutcomeViolation(
                f"binary outcome must be 0/1; record {int(bad[0])} has {dataset.y[bad[0]]!r}")
    if not (np.all(np.isfinite(dataset.y)) and np.all(np.isfinite(dataset.c))):
        raise ValueError("outcome and covariates must be finite")
    n_treated = int(dataset.a.sum())
    if n_treated == 0 or n_treated == dataset.n:
        raise DegenerateArm("both treatment arms must be present")


def build_design(dataset: ObservedDataset, terms: Sequence[str | Term], y0_override=None,
                 z_override=None) -> np.ndarray:
    """Evaluate each term on each record; column order follows ``terms``.

    ``y0_override`` supplies the value substituted for ``y0`` (a scalar or one
    value per record). ``z_override`` replaces the observed instrument, which is
    how conditional expectations over a binary instrument are formed.
    """
    terms = parse_terms(terms)
    n = dataset.n
    out = np.empty((n, len(terms)))
    z = dataset.z if z_override is None else np.broadcast_to(
        np.asarray(z_override, dtype=np.float64), (n,))
    y0 = None if y0_override is None else np.broadcast_to(
        np.asarray(y0_override, dtype=np.float64), (n,))
    for j, term in enumerate(terms):
        col = np.ones(n)
        for f in term.factors:
            if f == "1":
                continue
            if f == "z":
                col = col * z
            elif f == "y0":
                if y0 is None:
                    raise ValueError(f"term {term} references y0 but no y0_override was given")
                col = col * y0
            else:
                idx = int(f[1:])
                if idx > dataset.k:
                    raise UnknownTermIndex(
                        f"term {term} references covariate {idx} but records have {dataset.k}")
                col = col * dataset.c[:, idx - 1]
        out[:, j] = col
    return out


def _check_terms(terms, role, *, forbid=(), require=None):
    for t in terms:
        for f in forbid:
            if t.uses(f):
                raise InvalidTerm(f"{role} term {t} may not reference {f}")
        if require is not None and not t.uses(require):
            raise InvalidTerm(f"{role} term {t} must include a factor of {require}")


@dataclass(frozen=True)
class ModelSpec:
    """Parametric formulas for the four working models.

    instrument_terms
        logit Pr(Z=1|C).
    propensity_terms
        baseline part beta(Z, C; theta) of logit Pr(A=1|Y0, Z, C).
    selection_terms
        selection-bias function alpha(Y0, Z, C; eta); every term carries a
        factor of y0 so alpha vanishes at Y0 = 0.
    outcome_terms
        regression(s) of Y on (Z, C) among the untreated.
    """

    instrument_terms: tuple[Term, ...]
    propensity_terms: tuple[Term, ...]
    outcome_terms: tuple[Term, ...]
    selection_terms: tuple[Term, ...] = field(default=(Term(("y0",)),))

    def __post_init__(self):
        for name in ("instrument_terms", "propensity_terms", "outcome_terms", "selection_terms"):
            object.__setattr__(self, name, parse_terms(getattr(self, name)))
        _check_terms(self.instrument_terms, "instrument", forbid=("z", "y0"))
        _check_terms(self.propensity_terms, "propensity", forbid=("y0",))
        _check_terms(self.outcome_terms, "outcome", forbid=("y0",))
        _check_terms(self.selection_terms, "selection", require="y0")

    @property
    def dims(self) -> dict:
        return {"rho": len(self.instrument_terms), "theta": len(self.propensity_terms),
                "eta": len(self.selection_terms), "xi": len(self.outcome_terms)}

    def to_dict(self) -> dict:
        return {"instrument": [t.label for t in self.instrument_terms],
                "propensity": [t.label for t in self.propensity_terms],
                "selection": [t.label for t in self.selection_terms],
                "outcome": [t.label for t in self.outcome_terms]}

    @classmethod
    def from_dict(cls, d: dict) -> ModelSpec:
        kw = {"instrument_terms": d["instrument"], "propensity_terms": d["propensity"],
              "outcome_terms": d["outcome"]}
        if "selection" in d:
            kw["selection_terms"] = d["selection"]
        return cls(**kw)


@dataclass(frozen=True)
class ParamVector:
    """Named parameter blocks of one model fit."""

    rho: np.ndarray
    theta: np.ndarray
    eta: np.ndarray
    xi: np.ndarray
    psi: float = float("nan")

    def pack(self) -> np.ndarray:
        return np.concatenate([self.rho, self.theta, self.eta, self.xi, [self.psi]])

    @classmethod
    def unpack(cls, x, spec: ModelSpec, n_xi: int | None = None) -> ParamVector:
        d = spec.dims
        sizes = [d["rho"], d["theta"], d["eta"], d["xi"] if n_xi is None else n_xi]
        parts = np.split(np.asarray(x, dtype=np.float64), np.cumsum(sizes))
        if parts[-1].shape != (1,):
            raise ValueError("parameter vector length does not match the model spec")
        return cls(*parts[:4], float(parts[-1][0]))
