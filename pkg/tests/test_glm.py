import numpy as np
import pytest
from scipy.special import expit, logit

from ivett.core import ModelSpec, ObservedDataset
from ivett.errors import PreconditionError, SingularJacobian, SingularMatrix
from ivett.glm import fit_linear, fit_logistic, fit_outcome_restricted, logistic_score
from ivett.sim import DgpSpec, _lin3, generate, scenario_spec

from oracles import grid_logistic_max


def test_intercept_symmetric():
    res = fit_logistic(np.ones((4, 1)), np.array([0, 1, 0, 1.0]))
    assert res.converged
    assert res.coef[0] == 0.0


def test_intercept_closed_form():
    res = fit_logistic(np.ones((8, 1)), np.array([1, 1, 1, 0, 1, 1, 1, 0.0]))
    assert res.coef[0] == pytest.approx(logit(0.75), abs=1e-10)


def test_eight_records_match_grid_search():
    x = np.array([-1.0, -0.5, 0.0, 0.3, 0.8, 1.2, 1.9, 2.5])
    y = np.array([0, 0, 1, 0, 1, 0, 1, 1.0])
    res = fit_logistic(np.column_stack([np.ones(8), x]), y)
    assert res.converged
    oracle = grid_logistic_max(x, y, (-6, 6))
    np.testing.assert_allclose(res.coef, oracle, atol=2e-4)


def test_score_vanishes_and_cov_is_symmetric_psd():
    r = np.random.default_rng(3)
    x = np.column_stack([np.ones(500), r.normal(size=500)])
    y = (r.uniform(size=500) < expit(0.3 - 0.7 * x[:, 1])).astype(float)
    res = fit_logistic(x, y)
    assert np.max(np.abs(logistic_score(x, y, res.coef))) <= 1e-8
    np.testing.assert_allclose(res.cov_model, res.cov_model.T)
    assert np.all(np.linalg.eigvalsh(res.cov_model) >= 0)


def test_separation_is_flagged_not_raised():
    x = np.column_stack([np.ones(6), [-3, -2, -1, 1, 2, 3.0]])
    res = fit_logistic(x, np.array([0, 0, 0, 1, 1, 1.0]))
    assert res.separation and not res.converged


def test_collinear_logistic_design():
    x = np.column_stack([np.ones(5), np.ones(5)])
    with pytest.raises(SingularJacobian):
        fit_logistic(x, np.array([0, 1, 0, 1, 1.0]))


def test_logistic_needs_enough_rows():
    with pytest.raises(PreconditionError):
        fit_logistic(np.ones((1, 2)), np.array([1.0]))


def test_logistic_bias_at_large_n():
    r = np.random.default_rng(12)
    n = 100_000
    x = np.column_stack([np.ones(n), r.normal(size=n), r.binomial(1, 0.4, n)])
    truth = np.array([-0.4, 0.9, 0.5])
    y = (r.uniform(size=n) < expit(x @ truth)).astype(float)
    res = fit_logistic(x, y)
    assert np.all(np.abs(res.coef - truth) < 3 * res.se)


def test_linear_mean():
    res = fit_linear(np.ones((3, 1)), np.array([1.0, 2.0, 3.0]))
    assert res.coef[0] == pytest.approx(2.0)


def test_linear_interpolation():
    c = np.array([0.0, 1.0, 2.5, -1.0])
    res = fit_linear(np.column_stack([np.ones(4), c]), 2 + 3 * c)
    np.testing.assert_allclose(res.coef, [2.0, 3.0], atol=1e-10)


def test_linear_duplicated_column():
    c = np.array([0.0, 1.0, 2.5, -1.0])
    with pytest.raises(SingularMatrix):
        fit_linear(np.column_stack([np.ones(4), c, c]), c)


def test_linear_residuals_orthogonal():
    r = np.random.default_rng(1)
    x = np.column_stack([np.ones(200), r.normal(size=(200, 2))])
    y = r.normal(size=200)
    res = fit_linear(x, y)
    assert np.max(np.abs(x.T @ (y - x @ res.coef))) <= 1e-8 * 200


def _untreated_outcome_law(dgp, c1, c2, z):
    # Pr(Y=1 | A=0, Z=z, C=c) by Bayes over Y0
    p = expit(_lin3(dgp.y0_coef, c1, c2))
    q1 = 1 - expit(dgp.treatment_logit(1.0, z, c1, c2))
    q0 = 1 - expit(dgp.treatment_logit(0.0, z, c1, c2))
    return p * q1 / (p * q1 + (1 - p) * q0)


def test_restricted_outcome_fit_matches_enumeration():
    dgp = DgpSpec.binary()
    # the sparsest cell (c1=0, c2=1, z=1) has ~12k untreated records, so the
    # tolerance is about 1.2 sampling se there
    ds = generate(dgp, 1_000_000, 0)
    spec = scenario_spec("i", "binary")
    res = fit_outcome_restricted(ds, spec)
    assert res.converged
    xi = res.coef
    for c1 in (0.0, 1.0):
        for c2 in (0.0, 1.0):
            for z in (0.0, 1.0):
                fitted = expit(xi[0] + xi[1] * c1 + xi[2] * c2 + xi[3] * z + xi[4] * c1 * z)
                assert abs(fitted - _untreated_outcome_law(dgp, c1, c2, z)) < 0.005


def test_restricted_constant_outcome_flags_separation():
    ds = ObservedDataset(a=[0, 0, 0, 1, 0, 0], y=[0, 0, 0, 1, 0, 0], z=[0, 1, 0, 1, 1, 0],
                         c=np.zeros((6, 1)))
    spec = ModelSpec(["1"], ["1", "z"], ["1"])
    assert fit_outcome_restricted(ds, spec).separation


def test_restricted_needs_enough_untreated():
    ds = ObservedDataset(a=[0, 1, 1, 1], y=[0, 1, 0, 1], z=[0, 1, 0, 1], c=np.zeros((4, 1)))
    spec = ModelSpec(["1"], ["1", "z"], ["1", "z"])
    with pytest.raises(PreconditionError):
        fit_outcome_restricted(ds, spec)
