import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hdmed.model import (DataError, PenaltyFamily, PenaltySpec, destandardize_coef,
                         standardize_mediators, validate_dataset)
from hdmed.solver import SolverConfig, fit_path_select


def test_dimensions_example_design(rng):
    d = validate_dataset(rng.normal(size=300), rng.normal(size=(300, 1)),
                         rng.normal(size=(300, 500)))
    assert (d.n, d.q, d.p) == (300, 1, 500)


def test_intercept_is_appended(rng):
    d = validate_dataset(rng.normal(size=10), rng.normal(size=(10, 1)),
                         rng.normal(size=(10, 3)), include_intercept=True)
    assert d.q == 2
    assert np.all(d.X[:, 1] == 1.0)
    assert d.exposure_names == ("x1", "Intercept")
    assert d.tested_exposures.tolist() == [0]


def test_too_few_rows_rejected(rng):
    with pytest.raises(DataError, match="n >= q"):
        validate_dataset(rng.normal(size=3), rng.normal(size=(3, 2)), rng.normal(size=(3, 5)))


@pytest.mark.parametrize("bad", ["rows", "nan", "empty_m", "inf_x"])
def test_rejections(rng, bad):
    y, X, M = rng.normal(size=20), rng.normal(size=(20, 1)), rng.normal(size=(20, 4))
    if bad == "rows":
        X = X[:-1]
    elif bad == "nan":
        M[3, 2] = np.nan
    elif bad == "empty_m":
        M = np.empty((20, 0))
    else:
        X[0, 0] = np.inf
    with pytest.raises(DataError):
        validate_dataset(y, X, M)


def test_nonfinite_message_names_location(rng):
    M = rng.normal(size=(20, 4))
    M[3, 2] = np.nan
    with pytest.raises(DataError, match=r"M at index \(3, 2\)"):
        validate_dataset(rng.normal(size=20), rng.normal(size=(20, 1)), M)


def test_dataset_is_immutable(rng):
    d = validate_dataset(rng.normal(size=10), rng.normal(size=(10, 1)), rng.normal(size=(10, 3)))
    with pytest.raises(ValueError):
        d.M[0, 0] = 1.0
    assert np.array_equal(d.M, d.M.copy())


def test_standardize_scale_and_zero_variance(rng):
    M = np.column_stack([2.0 * rng.standard_normal(50), np.full(50, 3.0), rng.standard_normal(50)])
    M[:, 0] = (M[:, 0] - M[:, 0].mean()) / M[:, 0].std(ddof=1) * 2.0
    d = validate_dataset(rng.normal(size=50), rng.normal(size=(50, 1)), M)
    ds, scale, zv = standardize_mediators(d)
    assert scale[0] == pytest.approx(2.0, abs=1e-12)
    assert ds.M[:, 0].std(ddof=1) == pytest.approx(1.0, abs=1e-12)
    assert zv.tolist() == [False, True, False]
    assert scale[1] == 1.0


@given(arrays(np.float64, (30, 4), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, 4, elements=st.floats(-10, 10)))
def test_standardize_round_trip(M, coef):
    d = validate_dataset(np.zeros(30), np.ones((30, 1)), M)
    ds, scale, _ = standardize_mediators(d)
    # a coefficient on the standardized scale maps back to the same fitted values
    b_std = coef * scale
    back = destandardize_coef(b_std, scale)
    assert np.allclose(back, coef, atol=1e-12, rtol=1e-12)
    assert np.allclose(ds.M @ b_std, d.M @ back, atol=1e-8 * (1 + np.abs(d.M @ back).max()))


def test_fit_invariant_to_mediator_units(rng):
    n, p = 80, 12
    X = rng.normal(size=(n, 1))
    M = rng.normal(size=(n, p))
    y = M[:, :3] @ [1.0, -0.8, 0.6] + 0.5 * X[:, 0] + 0.5 * rng.normal(size=n)
    units = rng.uniform(0.1, 10.0, size=p)
    cfg = SolverConfig(cd_tol=1e-10)
    a = fit_path_select(validate_dataset(y, X, M), cfg)
    b = fit_path_select(validate_dataset(y, X, M * units), cfg)
    assert a.selected_index == b.selected_index
    np.testing.assert_allclose(a.selected.alpha0, b.selected.alpha0 * units, atol=1e-8)
    np.testing.assert_allclose(a.selected.alpha1, b.selected.alpha1, atol=1e-8)


def test_penalty_spec_validation():
    assert PenaltySpec().a == 3.7
    assert PenaltySpec().family is PenaltyFamily.SCAD
    with pytest.raises(ValueError):
        PenaltySpec(lam=-1.0)
    with pytest.raises(ValueError):
        PenaltySpec(a=2.0)
