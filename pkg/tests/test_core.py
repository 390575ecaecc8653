import numpy as np
import pytest

from ivett.core import ModelSpec, ObservedDataset, ParamVector, Term, build_design, validate
from ivett.errors import (BinaryOutcomeViolation, DegenerateArm, InvalidTerm, NonBinaryFlag,
                          RaggedCovariates, UnknownTermIndex)


def one(a=0, y=1, z=1, c=(0, 1)):
    return ObservedDataset([a, 1 - a], [y, 0], [z, 0], [list(c), [0, 0]])


def test_design_row_for_intercept_c1_z():
    x = build_design(one(), ["1", "c1", "z"])
    np.testing.assert_array_equal(x[0], [1, 0, 1])


def test_design_y0_product_with_zero():
    ds = ObservedDataset([0, 1], [1, 0], [0, 1], [[0.0], [1.0]])
    x = build_design(ds, ["y0*z"], y0_override=ds.y)
    assert x[0, 0] == 0


def test_design_truth_table():
    c1 = [0, 0, 1, 1]
    ds = ObservedDataset([0, 1, 0, 1], [0, 0, 1, 1], [0, 1, 0, 1], np.array(c1)[:, None])
    np.testing.assert_array_equal(build_design(ds, ["c1*z"])[:, 0], [0, 0, 0, 1])


def test_design_missing_covariate():
    with pytest.raises(UnknownTermIndex):
        build_design(one(), ["c3"])


def test_design_requires_y0_value():
    with pytest.raises(ValueError):
        build_design(one(), ["y0"])


def test_design_is_pure(tiny):
    a = build_design(tiny, ["1", "c1*z", "c2"])
    b = build_design(tiny, ["1", "c1*z", "c2"])
    assert a.tobytes() == b.tobytes()


def test_z_override(tiny):
    x = build_design(tiny, ["z", "c1*z"], z_override=1.0)
    np.testing.assert_array_equal(x[:, 0], 1.0)
    np.testing.assert_array_equal(x[:, 1], tiny.c[:, 0])


@pytest.mark.parametrize("text,factors", [("1", ("1",)), ("Z", ("z",)), ("c2*y0", ("c2", "y0")),
                                          ("1*c1", ("c1",)), ("c1*c2*z", ("c1", "c2", "z"))])
def test_term_parse(text, factors):
    assert Term.parse(text).factors == factors


@pytest.mark.parametrize("bad", ["x1", "c0", "c1*c2*z*y0", "", "c1+z"])
def test_term_parse_rejects(bad):
    with pytest.raises(InvalidTerm):
        Term.parse(bad)


def test_validate_accepts_well_formed(tiny):
    assert validate(tiny) is None


def test_validate_single_arm():
    with pytest.raises(DegenerateArm):
        validate(ObservedDataset([1, 1], [0, 1], [0, 1]))


def test_validate_nonbinary_instrument():
    with pytest.raises(NonBinaryFlag):
        validate(ObservedDataset([0, 1, 0], [0, 1, 1], [0, 2, 1]))


def test_validate_binary_outcome():
    with pytest.raises(BinaryOutcomeViolation):
        validate(ObservedDataset([0, 1], [0.5, 1], [0, 1]))
    validate(ObservedDataset([0, 1], [0.5, 1], [0, 1], outcome_kind="continuous"))


def test_ragged_covariates():
    with pytest.raises(RaggedCovariates):
        ObservedDataset([0, 1], [0, 1], [0, 1], [[0, 1], [1]])
    with pytest.raises(RaggedCovariates):
        ObservedDataset([0, 1, 0], [0, 1], [0, 1])


def test_dataset_is_immutable(tiny):
    with pytest.raises(ValueError):
        tiny.a[0] = 1


def test_selection_terms_need_y0():
    with pytest.raises(InvalidTerm):
        ModelSpec(["1"], ["1", "z"], ["1"], selection_terms=["z"])
    with pytest.raises(InvalidTerm):
        ModelSpec(["1"], ["1", "y0"], ["1"])
    with pytest.raises(InvalidTerm):
        ModelSpec(["1", "z"], ["1"], ["1"])


def test_alpha_vanishes_at_y0_zero(tiny):
    spec = ModelSpec(["1"], ["1", "z"], ["1"], selection_terms=["y0", "y0*z", "y0*c1"])
    x = build_design(tiny, spec.selection_terms, y0_override=0.0)
    assert np.all(x == 0.0)


def test_spec_round_trip():
    spec = ModelSpec(["1", "c1"], ["1", "z", "c1*z"], ["1", "z"], ["y0", "y0*z"])
    assert ModelSpec.from_dict(spec.to_dict()) == spec
    assert spec.dims == {"rho": 2, "theta": 3, "eta": 2, "xi": 2}


def test_param_vector_round_trip():
    spec = ModelSpec(["1", "c1"], ["1", "z"], ["1", "z", "c1"])
    pv = ParamVector(np.array([1.0, 2]), np.array([3.0, 4]), np.array([5.0]),
                     np.array([6.0, 7, 8]), 0.25)
    back = ParamVector.unpack(pv.pack(), spec)
    np.testing.assert_array_equal(back.pack(), pv.pack())
    with pytest.raises(ValueError):
        ParamVector.unpack(pv.pack()[:-1], spec)
