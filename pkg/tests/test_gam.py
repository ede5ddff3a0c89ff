import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoharvest.model.gam import (
    GamError,
    GamSpec,
    SmoothTerm,
    bspline_basis,
    bspline_knots,
    difference_penalty,
    fit_gam,
    objective,
    shrinkage_spec,
    simple_spec,
)
from oracles import bspline_design_oracle, dense_gcv, dense_penalized_solution


def one_smooth(k=10, order=2, grid=None, shrinkage=False):
    kw = {"lambda_grid": tuple(grid)} if grid is not None else {}
    return GamSpec((SmoothTerm("x", k, order),), shrinkage=shrinkage, **kw)


def sine_data(n, seed, sd=0.3):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(0, 10, n))
    return x, np.sin(x) + rng.normal(0, sd, n)


# -- basis -----------------------------------------------------------------------


@pytest.mark.parametrize("k", [4, 6, 10, 15])
def test_basis_matches_cox_de_boor(k):
    knots = bspline_knots(-2.0, 3.0, k)
    x = np.linspace(-2.0, 3.0, 57)
    B = bspline_basis(x, knots)
    assert B.shape == (57, k)
    np.testing.assert_allclose(B, bspline_design_oracle(x, knots, 3), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=30))
def test_basis_partition_of_unity(xs):
    B = bspline_basis(np.array(xs), bspline_knots(0.0, 1.0, 8))
    np.testing.assert_allclose(B.sum(axis=1), 1.0, atol=1e-12)


def test_difference_penalty_annihilates_polynomials_below_order():
    S = difference_penalty(8, 2)
    assert np.allclose(S @ np.ones(8), 0)
    assert np.allclose(S @ np.arange(8.0), 0)
    assert not np.allclose(S @ np.arange(8.0) ** 2, 0)


# -- closed-form oracles -----------------------------------------------------------


@pytest.mark.parametrize("lam", [1e-3, 0.1, 1.0, 100.0])
def test_fixed_lambda_matches_dense_closed_form(lam):
    x, y = sine_data(200, 0)
    model = fit_gam({"x": x}, one_smooth(), lambdas=[lam], y=y)
    X = model.design({"x": x})
    beta = dense_penalized_solution(X, y, model.penalty([lam]))
    np.testing.assert_allclose(model.coef, beta, rtol=0, atol=1e-8)
    np.testing.assert_allclose(model.predict({"x": x}), X @ beta, rtol=0, atol=1e-8)


def test_design_is_constrained_oracle_basis():
    x, y = sine_data(50, 1)
    model = fit_gam({"x": x}, one_smooth(k=8), lambdas=[1.0], y=y)
    sb = model.smooths[0]
    B = bspline_design_oracle(x, sb.knots, 3)
    X = model.design({"x": x})
    np.testing.assert_allclose(X[:, 1:], B @ sb.Z, atol=1e-12)
    # sum-to-zero: each smooth column is centred over the training data
    np.testing.assert_allclose(X[:, 1:].sum(axis=0), 0, atol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gcv_matches_dense_hat_matrix(seed):
    x, y = sine_data(30, seed)
    model = fit_gam({"x": x}, one_smooth(k=8), y=y)
    X = model.design({"x": x})
    assert model.gcv == pytest.approx(dense_gcv(X, y, model.penalty()), abs=1e-8)
    H = X @ np.linalg.inv(X.T @ X + model.penalty()) @ X.T
    assert model.edf_total == pytest.approx(np.trace(H), abs=1e-8)


def test_gcv_choice_is_grid_minimum():
    x, y = sine_data(30, 4)
    grid = np.logspace(-4, 6, 25)
    model = fit_gam({"x": x}, one_smooth(k=8, grid=grid), y=y)
    X = model.design({"x": x})
    scores = [dense_gcv(X, y, model.penalty([g])) for g in grid]
    assert model.lambdas[0] == grid[int(np.argmin(scores))]


# -- properties ------------------------------------------------------------------


def test_noise_free_line_is_recovered_exactly():
    x = np.linspace(0, 5, 80)
    y = 2 * x + 1
    for lam in (1e-3, 1.0, 1e6):
        model = fit_gam({"x": x}, one_smooth(), lambdas=[lam], y=y)
        assert model.train_metrics["rmse"] < 1e-6


def test_edf_decreases_with_lambda():
    x, y = sine_data(120, 5)
    edfs = [fit_gam({"x": x}, one_smooth(), lambdas=[lam], y=y).edf["x"] for lam in np.logspace(-4, 6, 15)]
    assert all(a >= b - 1e-10 for a, b in zip(edfs, edfs[1:]))
    assert edfs[0] > 7 and edfs[-1] < 1.1


def test_coefficients_are_stationary_point():
    x, y = sine_data(150, 6)
    model = fit_gam({"x": x}, one_smooth(), y=y)
    X = model.design({"x": x})
    P = model.penalty()
    grad = -2 * X.T @ (y - X @ model.coef) + 2 * P @ model.coef
    assert np.max(np.abs(grad)) < 1e-8 * max(1.0, np.max(np.abs(X.T @ y)))
    f0 = objective(model, X, y, model.coef)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert objective(model, X, y, model.coef + 1e-3 * rng.normal(size=len(model.coef))) > f0


def test_shrinkage_lets_a_smooth_reach_zero_edf():
    rng = np.random.default_rng(8)
    n = 400
    data = {"x1": rng.uniform(0, 10, n), "x2": rng.uniform(0, 10, n)}
    y = np.sin(data["x1"]) + rng.normal(0, 0.5, n)
    shrunk = fit_gam(data, GamSpec((SmoothTerm("x1"), SmoothTerm("x2")), shrinkage=True),
                     lambdas=[0.01, 0.01, 1e8, 1e8], y=y)
    plain = fit_gam(data, GamSpec((SmoothTerm("x1"), SmoothTerm("x2"))), lambdas=[0.01, 1e8], y=y)
    assert shrunk.edf["x2"] < 1e-3
    # without the null-space penalty the linear part of a smooth is never penalized
    assert plain.edf["x2"] == pytest.approx(1.0, abs=1e-3)
    assert shrunk.edf["x1"] > 4


def test_shrinkage_adds_null_space_penalties():
    x, y = sine_data(100, 2)
    plain = fit_gam({"x": x}, one_smooth(), lambdas=[1.0], y=y)
    shrunk = fit_gam({"x": x}, one_smooth(shrinkage=True), lambdas=[1.0, 1.0], y=y)
    assert [p[0] for p in plain.penalty_parts()] == ["x"]
    assert [p[0] for p in shrunk.penalty_parts()] == ["x", "x:null"]


def test_fit_is_deterministic():
    x, y = sine_data(100, 3)
    a = fit_gam({"x": x}, one_smooth(), y=y)
    b = fit_gam({"x": x}, one_smooth(), y=y)
    assert np.array_equal(a.coef, b.coef)


def test_predictions_outside_training_range_are_finite():
    x, y = sine_data(100, 3)
    model = fit_gam({"x": x}, one_smooth(), y=y)
    assert np.all(np.isfinite(model.predict({"x": np.array([-50.0, 50.0])})))


# -- errors ----------------------------------------------------------------------


def test_constant_feature_rejected():
    with pytest.raises(GamError, match="constant"):
        fit_gam({"x": np.ones(50)}, one_smooth(), y=np.arange(50.0))


def test_non_finite_target_rejected():
    x, y = sine_data(50, 0)
    y[3] = np.nan
    with pytest.raises(GamError, match="non-finite"):
        fit_gam({"x": x}, one_smooth(), y=y)


def test_wrong_number_of_lambdas_rejected():
    x, y = sine_data(50, 0)
    with pytest.raises(GamError):
        fit_gam({"x": x}, one_smooth(), lambdas=[1.0, 2.0], y=y)


def test_arrays_need_target():
    with pytest.raises(GamError):
        fit_gam({"x": np.arange(10.0)}, one_smooth())


@pytest.mark.parametrize("kw", [
    dict(smooths=()),
    dict(smooths=(SmoothTerm("x", k=3),)),
    dict(smooths=(SmoothTerm("x", order=9),)),
    dict(smooths=(SmoothTerm("x"),), linear=("x",)),
    dict(smooths=(SmoothTerm("x"),), lambda_grid=(0.0,)),
    dict(smooths=(SmoothTerm("x"),), family="poisson"),
])
def test_invalid_specs_rejected(kw):
    with pytest.raises(GamError):
        GamSpec(**kw)


def test_spec_round_trip():
    for spec in (simple_spec(), shrinkage_spec(8)):
        assert GamSpec.from_dict(spec.to_dict()) == spec
