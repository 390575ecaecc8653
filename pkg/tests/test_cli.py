import json
import os

import numpy as np
import pytest
from scipy.special import expit

from ivett.cli import ingest_csv, load_config, main
from ivett.errors import ConfigError, NonBinaryFlag, ParseError, UnsupportedOutcomeKind
from ivett.sim import DgpSpec, generate


def _write(path, text):
    path.write_text(text)
    return str(path)


def _config(tmp_path, name, obj):
    return _write(tmp_path / name, json.dumps(obj))


def _dataset_csv(ds, path):
    k = ds.k
    lines = ["a,y,z," + ",".join(f"c{i + 1}" for i in range(k))]
    for i in range(ds.n):
        vals = [ds.a[i], ds.y[i], ds.z[i], *ds.c[i]]
        lines.append(",".join(repr(float(v)) for v in vals))
    path.write_text("\n".join(lines) + "\n")
    return str(path)


# ---- ingestion --------------------------------------------------------------

def test_ingest_three_rows(tmp_path):
    p = _write(tmp_path / "d.csv", "a,y,z,c1\n0,1,1,0\n1,0,0,1\n0,0,1,1")
    ds = ingest_csv(p)
    assert ds.n == 3 and ds.k == 1
    np.testing.assert_array_equal(ds.a, [0, 1, 0])
    assert ds.outcome_kind == "binary"


def test_ingest_header_case_insensitive(tmp_path):
    p = _write(tmp_path / "d.csv", "A,Y,Z,C1\n0,1,1,0\n1,0,0,1\n")
    assert ingest_csv(p).n == 2


def test_ingest_missing_z(tmp_path):
    p = _write(tmp_path / "d.csv", "a,y,c1\n0,1,0\n1,0,1\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(p)
    assert err.value.column == "z"


def test_ingest_bad_number_reports_position(tmp_path):
    p = _write(tmp_path / "d.csv", "a,y,z,c1\n0,1,1,0\n1,x,0,1\n")
    with pytest.raises(ParseError) as err:
        ingest_csv(p)
    assert (err.value.row, err.value.column) == (2, "y")


def test_ingest_nonbinary_instrument(tmp_path):
    p = _write(tmp_path / "d.csv", "a,y,z,c1\n0,1,0.5,0\n1,0,0,1\n")
    with pytest.raises(NonBinaryFlag):
        ingest_csv(p)


def test_ingest_continuous_outcome(tmp_path):
    p = _write(tmp_path / "d.csv", "a,y,z,c1\n0,1.5,1,0\n1,0,0,1\n")
    assert ingest_csv(p).outcome_kind == "continuous"


# ---- fit --------------------------------------------------------------------

SCENARIO_I_MODELS = {
    "instrument": ["1", "c1", "c2"],
    "propensity": ["1", "z", "c1", "c1*z"],
    "outcome": ["1", "c1", "c2", "z", "c1*z"],
}


@pytest.fixture(scope="module")
def fit_setup(tmp_path_factory, data_5000):
    d = tmp_path_factory.mktemp("fit")
    _dataset_csv(data_5000, d / "data.csv")
    cfg = {"seed": 1, "dataset": {"path": "data.csv"}, "models": SCENARIO_I_MODELS,
           "estimators": ["ipw", "or", "dr", "eff"]}
    cfg_path = _config(d, "fit.json", cfg)
    out = str(d / "report.json")
    code = main(["fit", "--config", cfg_path, "--out", out])
    return d, cfg_path, out, code


def test_fit_report_fields(fit_setup):
    _, _, out, code = fit_setup
    assert code == 0
    rep = json.loads(open(out).read())
    assert rep["config"]["seed"] == 1
    for est in ("ipw", "or", "dr", "eff"):
        block = rep["estimates"][est]
        for key in ("selection_bias", "psi", "ett", "diagnostics"):
            assert key in block
        eta = block["selection_bias"]["Y0"]
        assert np.isfinite(eta["estimate"]) and np.isfinite(block["psi"]["se"])
        # se(eta) is about 0.5 at n = 5000, so a fixed 0.3 band is below one se
        assert abs(eta["estimate"] + 0.6) < 3 * eta["se"]
    assert set(rep["estimates"]["dr"]) >= {"instrument_model", "propensity_model",
                                           "outcome_model"}
    assert set(rep["estimates"]["dr"]["propensity_model"]) == {"intercept", "Z", "c1", "c1*Z"}


def test_fit_rerun_is_byte_identical(fit_setup):
    d, cfg_path, out, _ = fit_setup
    again = str(d / "again.json")
    assert main(["fit", "--config", cfg_path, "--out", again]) == 0
    assert open(out, "rb").read() == open(again, "rb").read()


def test_report_round_trips(fit_setup):
    _, _, out, _ = fit_setup
    text = open(out).read()
    assert json.dumps(json.loads(text), sort_keys=True, indent=2) + "\n" == text


def test_fit_named_covariates(tmp_path):
    # a dataset with named covariates and a squared term gives readable rows
    r = np.random.default_rng(6)
    n = 3000
    linc, age = r.normal(size=n), r.normal(size=n)
    z = (r.uniform(size=n) < expit(0.2 + 0.5 * linc)).astype(int)
    y0 = (r.uniform(size=n) < expit(0.3 + 0.4 * linc - 0.2 * age)).astype(int)
    a = (r.uniform(size=n) < expit(-1 + 2.5 * z + 0.3 * age - 0.4 * y0)).astype(int)
    y = np.where(a == 1, (r.uniform(size=n) < 0.7).astype(int), y0)
    rows = ["e401k,p401k,pira,linc,age"]
    rows += [f"{z[i]},{a[i]},{y[i]},{float(linc[i])!r},{float(age[i])!r}" for i in range(n)]
    _write(tmp_path / "k.csv", "\n".join(rows) + "\n")
    cfg = {"dataset": {"path": "k.csv",
                       "columns": {"a": "p401k", "y": "pira", "z": "e401k",
                                   "covariates": ["linc", "age"]}},
           "models": {"instrument": ["1", "linc", "age", "age^2"],
                      "propensity": ["1", "linc", "age", "age^2", "Z"],
                      "outcome": ["1", "linc", "age", "age^2", "Z"]},
           "estimators": ["dr"]}
    out = str(tmp_path / "r.json")
    assert main(["fit", "--config", _config(tmp_path, "c.json", cfg), "--out", out]) == 0
    dr = json.loads(open(out).read())["estimates"]["dr"]
    assert set(dr["propensity_model"]) == {"intercept", "linc", "age", "age^2", "Z"}
    assert list(dr["selection_bias"]) == ["Y0"]


def test_fit_data_flag_overrides_path(tmp_path, data_5000):
    data = _dataset_csv(data_5000, tmp_path / "other.csv")
    cfg = _config(tmp_path, "c.json", {"dataset": {"path": "missing.csv"},
                                       "models": SCENARIO_I_MODELS, "estimators": ["or"]})
    out = str(tmp_path / "r.json")
    assert main(["fit", "--data", data, "--config", cfg, "--out", out]) == 0


def test_eff_on_continuous_rejected_before_fitting(tmp_path):
    ds = generate(DgpSpec.continuous(), 200, 1)
    _dataset_csv(ds, tmp_path / "c.csv")
    cfg = _config(tmp_path, "c.json",
                  {"dataset": {"path": "c.csv", "outcome_kind": "continuous"},
                   "models": SCENARIO_I_MODELS, "estimators": ["dr", "eff"]})
    with pytest.raises(UnsupportedOutcomeKind):
        load_config(cfg, "fit")
    assert main(["fit", "--config", cfg, "--out", str(tmp_path / "r.json")]) == 2


def test_unknown_section_rejected(tmp_path):
    cfg = _config(tmp_path, "c.json", {"identify": {}, "bogus": 1})
    with pytest.raises(ConfigError):
        load_config(cfg, "identify")


# ---- identify ---------------------------------------------------------------

def test_identify_default(tmp_path):
    out = str(tmp_path / "id.json")
    assert main(["identify", "--config", _config(tmp_path, "c.json", {}), "--out", out]) == 0
    rep = json.loads(open(out).read())
    alt = rep["witness"]["alternative"]
    got = [alt[k] for k in ("theta1", "theta2", "eta1", "eta2", "tau")]
    assert np.max(np.abs(np.array(got) - [-0.3, 0.41, 0.91, 1.37, -0.28])) <= 0.005
    assert rep["certificates"]["separable_logit"]["unique"] is True


def test_identify_invalid_witness_is_a_finding(tmp_path):
    out = str(tmp_path / "id.json")
    cfg = _config(tmp_path, "c.json", {"identify": {"rho1": 10.0}})
    assert main(["identify", "--config", cfg, "--out", out]) == 0
    assert json.loads(open(out).read())["witness"]["error"] == "InvalidWitness"


def test_seed_from_environment(tmp_path):
    cfg = _config(tmp_path, "c.json", {"seed": 3})
    assert load_config(cfg, "identify", env={}).seed == 3
    assert load_config(cfg, "identify", env={"IVETT_SEED": "41"}).seed == 41
    with pytest.raises(ConfigError):
        load_config(cfg, "identify", env={"IVETT_SEED": "minus one"})


# ---- simulate ---------------------------------------------------------------

def test_simulate_zero_reps_rejected(tmp_path):
    cfg = _config(tmp_path, "s.json", {"options": {"reps": 0}})
    with pytest.raises(ConfigError):
        load_config(cfg, "simulate")
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "o")]) == 2


def test_simulate_is_deterministic_across_threads(tmp_path):
    cfg = _config(tmp_path, "s.json", {"seed": 12, "dgp": {"kind": "binary"},
                                       "estimators": ["ipw", "dr", "eff"],
                                       "options": {"scenarios": ["i"], "sizes": [300],
                                                   "reps": 4}})
    outs = []
    for threads, sub in ((1, "a"), (1, "b"), (3, "c")):
        d = tmp_path / sub
        assert main(["simulate", "--config", cfg, "--out-dir", str(d),
                     "--threads", str(threads)]) == 0
        outs.append({f: (d / f).read_bytes() for f in sorted(os.listdir(d))})
    assert outs[0] == outs[1] == outs[2]
    assert sorted(outs[0]) == ["binary_i_n300_replications.csv", "binary_i_n300_summary.json"]
    summary = json.loads(outs[0]["binary_i_n300_summary.json"])
    assert summary["summary"]["replications"] == 4
    assert "relative_efficiency" in summary
