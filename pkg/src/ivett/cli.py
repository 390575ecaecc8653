"""Command-line interface: ``ivett fit``, ``ivett simulate`` and ``ivett identify``.

Each command reads one JSON config with named sections and writes
deterministic JSON (sorted keys, fixed float formatting). Reports embed the
resolved config, so a report alone is enough to rerun it.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ModelSpec, ObservedDataset, Term, validate
from .errors import ConfigError, IvettError, ParseError, UnsupportedOutcomeKind
from .estimators import estimate_efficient, estimate_ipw, estimate_or, fit_dr
from .identification import witness_report
from .sim import (ESTIMATOR_ORDER, SCENARIOS, DgpSpec, default_workers, dumps_json,
                  relative_efficiency, run_mc, scenario_spec)

SEED_ENV = "IVETT_SEED"
COMMANDS = ("fit", "simulate", "identify")
_SECTIONS = {
    "fit": {"seed", "dataset", "models", "estimators", "options"},
    "simulate": {"seed", "dgp", "models", "estimators", "options"},
    "identify": {"seed", "identify", "options"},
}


# ---------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    """A validated, fully resolved configuration for one command."""

    command: str
    seed: int
    sections: dict = field(default_factory=dict)
    base_dir: str = "."

    def resolved(self) -> dict:
        """The config as embedded in reports; paths stay as written."""
        return dict(self.sections, seed=self.seed)


def _seed(raw, source):
    if isinstance(raw, bool) or not isinstance(raw, (int, str)):
        raise ConfigError(f"{source} seed must be a non-negative integer, got {raw!r}")
    try:
        v = int(raw)
    except ValueError:
        raise ConfigError(f"{source} seed must be an integer, got {raw!r}") from None
    if v < 0 or v >= 2 ** 64:
        raise ConfigError(f"{source} seed must lie in [0, 2^64), got {v}")
    return v


def _estimators(raw, allowed=ESTIMATOR_ORDER):
    if raw is None:
        return list(allowed)
    if not isinstance(raw, list) or not raw:
        raise ConfigError("estimators must be a non-empty list")
    bad = [e for e in raw if e not in allowed]
    if bad:
        raise ConfigError(f"unknown estimators {bad}; choose from {list(allowed)}")
    return [e for e in ESTIMATOR_ORDER if e in raw]


def load_config(path: str, command: str, env: Optional[dict] = None,
                data_path: Optional[str] = None) -> RunConfig:
    """Read and validate a JSON config for ``command``.

    The environment variable IVETT_SEED, when set, replaces the config seed.
    ``data_path`` (the ``--data`` flag) replaces dataset.path.
    """
    env = os.environ if env is None else env
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    declared = raw.pop("command", command)
    if declared != command:
        raise ConfigError(f"config is for '{declared}', not '{command}'")
    unknown = set(raw) - _SECTIONS[command]
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)} for '{command}'")
    if data_path is not None:
        raw["dataset"] = dict(raw.get("dataset") or {}, path=os.path.abspath(data_path))
    seed = _seed(raw.pop("seed", 0), "config")
    if env.get(SEED_ENV, "") != "":
        seed = _seed(env[SEED_ENV], SEED_ENV)
    cfg = RunConfig(command, seed, raw, os.path.dirname(os.path.abspath(path)))
    {"fit": _check_fit, "simulate": _check_simulate, "identify": _check_identify}[command](cfg)
    return cfg


def _options(cfg, defaults):
    opts = dict(defaults)
    given = cfg.sections.get("options", {}) or {}
    if not isinstance(given, dict):
        raise ConfigError("options must be an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown options {sorted(unknown)}")
    opts.update(given)
    cfg.sections["options"] = opts
    return opts


FIT_OPTIONS = {"tol": 1e-8, "ey_method": "submodel", "profile_start": False}
SIM_OPTIONS = {"scenarios": ["i"], "sizes": [1000], "reps": 1000}


def _check_fit(cfg: RunConfig):
    ds = cfg.sections.get("dataset")
    if not isinstance(ds, dict) or "path" not in ds:
        raise ConfigError("fit needs a dataset section with a path")
    full = os.path.join(cfg.base_dir, ds["path"])
    if not os.path.isfile(full):
        raise ConfigError(f"dataset file {ds['path']} does not exist")
    kind = ds.get("outcome_kind")
    if kind not in (None, "binary", "continuous"):
        raise ConfigError(f"outcome_kind must be binary or continuous, got {kind!r}")
    if "models" not in cfg.sections:
        raise ConfigError("fit needs a models section")
    cfg.sections["estimators"] = _estimators(cfg.sections.get("estimators"))
    opts = _options(cfg, FIT_OPTIONS)
    if opts["ey_method"] not in ("submodel", "empirical"):
        raise ConfigError("ey_method must be 'submodel' or 'empirical'")
    if not (isinstance(opts["tol"], (int, float)) and opts["tol"] > 0):
        raise ConfigError("tol must be positive")
    if not isinstance(opts["profile_start"], bool):
        raise ConfigError("profile_start must be true or false")
    if kind == "continuous" and "eff" in cfg.sections["estimators"]:
        raise UnsupportedOutcomeKind("the efficient estimator needs a binary outcome")


def _check_simulate(cfg: RunConfig):
    dgp = cfg.sections.get("dgp", {"kind": "binary"})
    if not isinstance(dgp, dict) or dgp.get("kind") not in ("binary", "continuous"):
        raise ConfigError("dgp.kind must be 'binary' or 'continuous'")
    try:
        spec = DgpSpec.from_dict(dgp) if len(dgp) > 1 else \
            getattr(DgpSpec, dgp["kind"])()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid dgp section: {exc}") from None
    cfg.sections["dgp"] = spec.to_dict()
    cfg.sections["estimators"] = _estimators(cfg.sections.get("estimators"))
    if spec.kind == "continuous" and "eff" in cfg.sections["estimators"]:
        raise UnsupportedOutcomeKind("the efficient estimator needs a binary outcome")
    opts = _options(cfg, SIM_OPTIONS)
    for key in ("scenarios", "sizes"):
        if isinstance(opts[key], (str, int)):
            opts[key] = [opts[key]]
    if not opts["scenarios"] or any(s not in SCENARIOS for s in opts["scenarios"]):
        raise ConfigError(f"scenarios must be drawn from {list(SCENARIOS)}")
    if not opts["sizes"] or any(not isinstance(n, int) or isinstance(n, bool) or n < 10
                                for n in opts["sizes"]):
        raise ConfigError("sizes must be integers of at least 10")
    reps = opts["reps"]
    if not isinstance(reps, int) or isinstance(reps, bool) or reps < 1:
        raise ConfigError(f"reps must be a positive integer, got {reps!r}")
    if "models" in cfg.sections and len(opts["scenarios"]) > 1:
        raise ConfigError("explicit models apply to a single scenario")


IDENTIFY_DEFAULTS = {"theta": [0.3, 0.6, 0.1, 0.7], "tau": -0.2, "rho1": 0.3, "pz": 0.5,
                     "grid_step": 0.05}


def _check_identify(cfg: RunConfig):
    given = cfg.sections.get("identify", {}) or {}
    unknown = set(given) - set(IDENTIFY_DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown identify keys {sorted(unknown)}")
    merged = dict(IDENTIFY_DEFAULTS, **given)
    if len(merged["theta"]) != 4:
        raise ConfigError("identify.theta must hold (theta1, theta2, eta1, eta2)")
    if not merged["tau"] < 0:
        raise ConfigError("identify.tau must be negative (Pr(Y0=1) = exp(tau))")
    if not 0 < merged["pz"] < 1 or not merged["grid_step"] > 0:
        raise ConfigError("identify.pz must lie in (0, 1) and grid_step be positive")
    cfg.sections["identify"] = merged
    _options(cfg, {})


# ---------------------------------------------------------------------------
# datasets and formulas with named covariates

def ingest_csv(path: str, columns: Optional[dict] = None,
               outcome_kind: Optional[str] = None) -> ObservedDataset:
    """Read a CSV with a header row into a validated dataset.

    By default the header must name ``a``, ``y``, ``z`` and covariates
    ``c1..ck`` (case-insensitive). ``columns`` maps the roles to other header
    names: {"a": ..., "y": ..., "z": ..., "covariates": [...]}. The outcome is
    binary when every value is 0 or 1 unless ``outcome_kind`` says otherwise.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError(f"{path} is empty", row=0)
    header = [h.strip().lower() for h in rows[0]]
    pos = {h: i for i, h in enumerate(header)}
    if columns:
        roles = {r: str(columns.get(r, r)).lower() for r in ("a", "y", "z")}
        covs = [str(c).lower() for c in columns.get("covariates", [])]
    else:
        roles = {r: r for r in ("a", "y", "z")}
        covs = sorted((h for h in header if h.startswith("c") and h[1:].isdigit()),
                      key=lambda h: int(h[1:]))
        expected = [f"c{i}" for i in range(1, len(covs) + 1)]
        if covs != expected:
            missing = sorted(set(expected) - set(covs), key=lambda h: int(h[1:]))
            raise ParseError(f"covariate columns must be c1..ck; missing {missing[0]}",
                             row=0, column=missing[0])
    for name in list(roles.values()) + covs:
        if name not in pos:
            raise ParseError(f"column '{name}' is missing from the header", row=0, column=name)
    order = [roles["a"], roles["y"], roles["z"]] + covs
    data = np.empty((len(rows) - 1, len(order)))
    for r, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(f"row {r} has {len(row)} fields, header has {len(header)}", row=r)
        for j, name in enumerate(order):
            text = row[pos[name]].strip()
            try:
                data[r - 1, j] = float(text)
            except ValueError:
                raise ParseError(f"row {r}, column '{name}': cannot parse {text!r} as a number",
                                 row=r, column=name) from None
    y = data[:, 1]
    if outcome_kind is None:
        outcome_kind = "binary" if np.all((y == 0) | (y == 1)) else "continuous"
    ds = ObservedDataset(data[:, 0], y, data[:, 2], data[:, 3:], outcome_kind)
    validate(ds)
    return ds


def _factor_maps(names):
    to_code = {"1": "1", "intercept": "1", "z": "z", "y0": "y0", "alpha": "y0"}
    to_code.update({n.lower(): f"c{i + 1}" for i, n in enumerate(names)})
    to_name = {"z": "Z", "y0": "Y0"}
    to_name.update({f"c{i + 1}": n for i, n in enumerate(names)})
    return to_code, to_name


def translate_terms(terms, names) -> list:
    """Rewrite formula terms that use covariate names as c1..ck terms."""
    to_code, _ = _factor_maps(names)
    out = []
    for t in terms:
        factors = [f.strip().lower() for f in str(t).replace("^2", "*").split("*")]
        if str(t).endswith("^2"):
            factors = [factors[0], factors[0]]
        out.append("*".join(to_code.get(f, f) for f in factors if f))
    return out


def term_label(term: Term, names) -> str:
    """Readable row label: 'intercept', 'Z', 'age^2', 'linc*Z'."""
    _, to_name = _factor_maps(names)
    if term.factors == ("1",):
        return "intercept"
    parts = [to_name.get(f, f) for f in term.factors]
    if len(parts) == 2 and parts[0] == parts[1]:
        return f"{parts[0]}^2"
    return "*".join(parts)


def _model_spec(models: dict, names) -> ModelSpec:
    try:
        d = {k: translate_terms(v, names) for k, v in models.items()}
        return ModelSpec.from_dict(d)
    except KeyError as exc:
        raise ConfigError(f"models section is missing {exc}") from None


# ---------------------------------------------------------------------------
# commands

def _coef_table(terms, est, se, names):
    return {term_label(t, names): {"estimate": float(e), "se": float(s)}
            for t, e, s in zip(terms, est, se)}


def _fit_report(res, spec: ModelSpec, names, outcome_blocks) -> dict:
    nan = np.full(64, np.nan)
    params, ses = res.params, res.param_se
    out = {"estimator": res.estimator_kind}
    if "rho" in params:
        out["instrument_model"] = _coef_table(spec.instrument_terms, params["rho"],
                                              ses.get("rho", nan), names)
    if "theta" in params:
        out["propensity_model"] = _coef_table(spec.propensity_terms, params["theta"],
                                              ses.get("theta", nan), names)
    if "xi" in params:
        xi, xs = params["xi"], ses.get("xi", nan)
        p = len(spec.outcome_terms)
        if len(xi) == p:
            out["outcome_model"] = _coef_table(spec.outcome_terms, xi, xs, names)
        else:
            out["outcome_model"] = {
                block: _coef_table(spec.outcome_terms, xi[b * p:(b + 1) * p],
                                   xs[b * p:(b + 1) * p], names)
                for b, block in enumerate(outcome_blocks[:len(xi) // p])}
    out["selection_bias"] = _coef_table(spec.selection_terms, res.eta_hat, res.se_eta, names)
    out["psi"] = {"estimate": res.psi_hat, "se": res.se_psi}
    out["ett"] = {"estimate": res.ett_hat, "se": res.se_ett}
    out["diagnostics"] = res.to_dict()["diagnostics"]
    return out


CONTINUOUS_BLOCKS = ("g_weighted", "weight", "y_weighted")


def cmd_fit(cfg: RunConfig) -> tuple:
    """Run the requested estimators on a CSV dataset; returns (report, all_converged)."""
    dcfg = cfg.sections["dataset"]
    columns = dcfg.get("columns")
    names = [str(c) for c in columns.get("covariates", [])] if columns else []
    ds = ingest_csv(os.path.join(cfg.base_dir, dcfg["path"]), columns, dcfg.get("outcome_kind"))
    if not names:
        names = [f"c{i + 1}" for i in range(ds.k)]
    ests = cfg.sections["estimators"]
    if ds.outcome_kind != "binary" and "eff" in ests:
        raise UnsupportedOutcomeKind("the efficient estimator needs a binary outcome")
    spec = _model_spec(cfg.sections["models"], names)
    opts = cfg.sections["options"]
    prof = opts["profile_start"]
    results = {}
    dr = None
    ok = True
    for est in ests:
        try:
            if est == "ipw":
                res = estimate_ipw(ds, spec, tol=opts["tol"], profile_start=prof)
            elif est == "or":
                res = estimate_or(ds, spec, tol=opts["tol"], profile_start=prof)
            elif est == "dr":
                dr = fit_dr(ds, spec, tol=opts["tol"], profile_start=prof)
                res = dr.result
            else:
                dr = dr or fit_dr(ds, spec, tol=opts["tol"], with_se=False, profile_start=prof)
                res = estimate_efficient(ds, spec, ey_method=opts["ey_method"], dr_fit=dr)
            results[est] = _fit_report(res, spec, names, CONTINUOUS_BLOCKS)
            ok = ok and res.converged
        except IvettError as exc:
            results[est] = {"estimator": est, "error": type(exc).__name__, "message": str(exc)}
            ok = False
    report = {"command": "fit", "config": cfg.resolved(),
              "dataset": {"n": ds.n, "k": ds.k, "outcome_kind": ds.outcome_kind,
                          "treated_fraction": ds.treated_fraction,
                          "treated_outcome_mean": ds.treated_outcome_mean,
                          "covariates": names},
              "estimates": results}
    return report, ok


def cmd_simulate(cfg: RunConfig, out_dir: str, threads: Optional[int] = None) -> list:
    """Run every (scenario, n) cell; write CSV and JSON per cell. Returns the paths."""
    dgp = DgpSpec.from_dict(cfg.sections["dgp"])
    opts = cfg.sections["options"]
    ests = cfg.sections["estimators"]
    models = cfg.sections.get("models")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for scen in opts["scenarios"]:
        spec = _model_spec(models, []) if models else scenario_spec(scen, dgp.kind)
        for n in opts["sizes"]:
            summ = run_mc(dgp, scen, n, opts["reps"], cfg.seed, ests,
                          workers=threads or default_workers(), spec=spec)
            stem = f"{dgp.kind}_{scen}_n{n}"
            report = {"command": "simulate", "config": cfg.resolved(),
                      "models": spec.to_dict(), "summary": summ.to_dict(),
                      "coverage_table": _coverage_row(summ)}
            if "dr" in ests and "eff" in ests:
                report["relative_efficiency"] = relative_efficiency(summ, summ)
            csv_path = os.path.join(out_dir, f"{stem}_replications.csv")
            json_path = os.path.join(out_dir, f"{stem}_summary.json")
            with open(csv_path, "w", newline="") as fh:
                fh.write(summ.records_csv())
            with open(json_path, "w") as fh:
                fh.write(dumps_json(report))
            written += [csv_path, json_path]
    return written


def _coverage_row(summ) -> dict:
    return {e: s.coverage for e, s in summ.per_estimator.items()}


def cmd_identify(cfg: RunConfig) -> dict:
    p = cfg.sections["identify"]
    rep = witness_report(tuple(p["theta"]), p["tau"], p["rho1"], p["pz"], p["grid_step"])
    return {"command": "identify", "config": cfg.resolved(), **rep}


# ---------------------------------------------------------------------------

def _write(path: str, text: str):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ivett", description="Effect of treatment on the "
                                 "treated with a binary instrument.")
    sub = ap.add_subparsers(dest="command", required=True)
    f = sub.add_parser("fit", help="estimate eta, psi and the ETT from a CSV dataset")
    f.add_argument("--data", help="CSV dataset (overrides dataset.path in the config)")
    f.add_argument("--config", required=True)
    f.add_argument("--out", required=True, help="JSON report path")
    s = sub.add_parser("simulate", help="Monte Carlo coverage study")
    s.add_argument("--config", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: available cores)")
    i = sub.add_parser("identify", help="non-identification witness and certificates")
    i.add_argument("--config", required=True)
    i.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "fit":
            cfg = load_config(args.config, "fit", data_path=args.data)
            report, ok = cmd_fit(cfg)
            _write(args.out, dumps_json(report))
            return 0 if ok else 1
        if args.command == "simulate":
            if args.threads is not None and args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            cfg = load_config(args.config, "simulate")
            cmd_simulate(cfg, args.out_dir, args.threads)
            return 0
        cfg = load_config(args.config, "identify")
        _write(args.out, dumps_json(cmd_identify(cfg)))
        return 0
    except IvettError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
