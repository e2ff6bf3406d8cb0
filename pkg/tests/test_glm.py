import math

import numpy as np
import pytest
from conftest import random_design
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import brute_force_mle, finite_difference_gradient, loglik
from sklearn.base import clone

from cohortrisk.design import DesignMatrix
from cohortrisk.errors import ColumnMismatch, DegenerateDesign, MissingColumn, NotPositiveDefinite
from cohortrisk.glm import (
    FitOptions,
    IRLSLogisticRegression,
    LogisticModel,
    aic,
    fit_design,
    fit_logistic,
    log_likelihood,
    predict_prob,
    score_vector,
    solve_spd,
)


def test_intercept_only_half():
    m = fit_logistic(np.zeros((10, 0)), [0, 1] * 5)
    assert abs(m.intercept) <= 1e-10
    assert m.converged


def test_intercept_only_quarter():
    m = fit_logistic(np.zeros((8, 0)), [1, 0, 0, 0] * 2)
    assert m.intercept == pytest.approx(math.log(1 / 3), abs=1e-9)


def test_perfect_separation_flags_divergence():
    x = np.array([0, 0, 0, 0, 1, 1, 1, 1.0])
    m = fit_logistic(x[:, None], x)
    assert not m.converged
    assert abs(m.coefficients["x0"]) > 10
    # the log-likelihood keeps rising along the accepted iterates
    assert all(b >= a for a, b in zip(m.history, m.history[1:]))
    assert m.history[-1] > m.history[0]


def test_degenerate_inputs():
    with pytest.raises(DegenerateDesign):
        fit_logistic(np.zeros((0, 2)), [])
    with pytest.raises(DegenerateDesign):
        fit_logistic(np.zeros((3, 0)), [0, 1, 0], fit_intercept=False)
    with pytest.raises(ColumnMismatch):
        fit_logistic(np.zeros((3, 2)), [0, 1, 0], ["a", "a"])


def _model(coefs, ll=-1.0):
    m = LogisticModel(dict(coefs), True, ll, 0.0, 1)
    m.aic = aic(m)
    return m


def test_log_likelihood_examples():
    one = DesignMatrix(("r",), (), np.zeros((1, 0)), np.array([1.0]))
    m = _model({"intercept": 0.0})
    assert log_likelihood(m, one) == pytest.approx(math.log(0.5))
    two = DesignMatrix(("r", "s"), (), np.zeros((2, 0)), np.array([1.0, 1.0]))
    assert log_likelihood(m, two) == pytest.approx(2 * math.log(0.5))
    sure = _model({"intercept": 100.0})
    assert log_likelihood(sure, one) == pytest.approx(0.0, abs=1e-11)
    assert log_likelihood(sure, one) <= 0.0
    with pytest.raises(ColumnMismatch):
        log_likelihood(_model({"intercept": 0.0, "zz": 1.0}), one)


def test_aic_formula():
    assert aic(LogisticModel({"intercept": 0.0}, True, -10.0, 0.0, 1)) == 22
    assert aic(LogisticModel({"intercept": 0.0, "a": 1.0, "b": 2.0}, True, 0.0, 0.0, 1)) == 6


def test_useless_column_raises_aic_about_two(rng):
    d = random_design(rng, 400, 1, beta=[1.0])
    noise = rng.random(400) < 0.5
    d2 = DesignMatrix(d.row_ids, ("x0", "noise"), np.column_stack([d.values, noise]), d.labels)
    small, big = fit_design(d), fit_design(d2)
    assert big.log_likelihood >= small.log_likelihood - 1e-9
    assert 0.0 < big.aic - small.aic <= 2.0 + 1e-9
    assert big.aic - small.aic > 1.0  # almost always close to 2 for pure noise


def test_predict_prob():
    assert predict_prob(_model({"intercept": 0.0, "a": 0.0}), {"a": 3.0}) == 0.5
    assert predict_prob(_model({"intercept": math.log(3)}), {}) == pytest.approx(0.75)
    m = _model({"intercept": 0.0, "a": 0.7})
    assert predict_prob(m, {"a": 1.0}) < predict_prob(m, {"a": 2.0})
    with pytest.raises(MissingColumn):
        predict_prob(m, {})


def test_solve_spd_examples(rng):
    r = rng.normal(size=4)
    np.testing.assert_allclose(solve_spd(np.eye(4), r), r)
    np.testing.assert_allclose(solve_spd([[4.0]], [8.0]), [2.0])
    A = rng.normal(size=(6, 6))
    A = A @ A.T + 0.1 * np.eye(6)
    b = rng.normal(size=6)
    x = solve_spd(A, b)
    assert np.linalg.norm(A @ x - b) <= 1e-8 * (1 + np.linalg.norm(b))


def test_solve_spd_singular_uses_jitter_and_fails_on_indefinite():
    singular = np.array([[1.0, 1.0], [1.0, 1.0]])
    x = solve_spd(singular, [1.0, 1.0])
    assert np.all(np.isfinite(x))
    with pytest.raises(NotPositiveDefinite):
        solve_spd(np.array([[-1.0, 0.0], [0.0, -1.0]]), [1.0, 1.0])


def test_collinear_columns_fit():
    rng = np.random.default_rng(3)
    x = (rng.random(200) < 0.4).astype(float)
    y = (rng.random(200) < np.where(x > 0, 0.6, 0.3)).astype(float)
    m = fit_logistic(np.column_stack([x, x]), y)
    assert np.isfinite(m.log_likelihood)
    single = fit_logistic(x[:, None], y)
    assert m.log_likelihood == pytest.approx(single.log_likelihood, abs=1e-6)


def test_matches_bruteforce_small():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    y = (rng.random(40) < 1 / (1 + np.exp(-(0.3 + X @ [0.8, -0.5])))).astype(float)
    m = fit_logistic(X, y)
    Xi = np.column_stack([np.ones(40), X])
    ref = brute_force_mle(Xi, y)
    np.testing.assert_allclose([m.coefficients[k] for k in ("intercept", "x0", "x1")], ref, atol=1e-4)


def test_score_and_finite_difference():
    rng = np.random.default_rng(1)
    d = random_design(rng, 50, 3, beta=[0.5, -0.5, 0.2], binary=False)
    m = fit_design(d)
    assert m.converged
    assert np.max(np.abs(score_vector(m, d))) <= 1e-6
    beta = np.array(list(m.coefficients.values()))
    Xi = np.column_stack([np.ones(d.n_rows), d.values])
    fd = finite_difference_gradient(lambda b: loglik(b, Xi, d.labels), beta + 0.3)
    mu = 1 / (1 + np.exp(-(Xi @ (beta + 0.3))))
    np.testing.assert_allclose(Xi.T @ (d.labels - mu), fd, atol=1e-5)


def test_model_json_roundtrip():
    m = fit_logistic(np.array([[0.0], [1.0], [1.0], [0.0]]), [0, 1, 0, 1])
    again = LogisticModel.from_dict(m.to_dict())
    assert again == m
    assert set(m.to_dict()) == {"coefficients", "converged", "log_likelihood", "aic", "iterations"}


def test_fit_options_validation():
    with pytest.raises(ValueError):
        FitOptions(max_iterations=0)
    with pytest.raises(ValueError):
        FitOptions(rel_tolerance=0)


def test_iteration_cap():
    rng = np.random.default_rng(2)
    d = random_design(rng, 200, 2, beta=[1, 1], binary=False)
    m = fit_design(d, options=FitOptions(max_iterations=1))
    assert m.iterations == 1 and not m.converged


@given(
    arrays(np.float64, st.tuples(st.integers(5, 40), st.integers(0, 3)), elements=st.floats(-3, 3)),
    st.integers(0, 2**32 - 1),
)
def test_loglik_monotone_and_aic_invariant(X, seed):
    y = (np.random.default_rng(seed).random(X.shape[0]) < 0.4).astype(float)
    m = fit_logistic(X, y)
    assert all(b >= a for a, b in zip(m.history, m.history[1:]))
    assert m.log_likelihood <= 0.0
    assert m.aic == 2 * m.n_params - 2 * m.log_likelihood


def test_estimator_api(rng):
    d = random_design(rng, 300, 2, beta=[1.5, -1.0])
    est = IRLSLogisticRegression(max_iter=30)
    assert est.get_params() == {"max_iter": 30, "tol": 1e-8, "ridge_jitter": 1e-10, "fit_intercept": True}
    est.fit(d.values, d.labels)
    proba = est.predict_proba(d.values)
    assert proba.shape == (300, 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(est.predict(d.values)) <= {0, 1}
    ref = fit_design(d)
    np.testing.assert_allclose(est.coef_[0], ref.beta())
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(ColumnMismatch):
        est.decision_function(d.values[:, :1])
