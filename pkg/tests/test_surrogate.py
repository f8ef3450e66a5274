import numpy as np
import pytest

from simplex_ego.errors import DuplicateInputs, ShapeError
from simplex_ego.surrogate import (
    _Likelihood,
    condition_gp,
    fit_gp,
    matern52,
    predict,
    predict_many,
)


def _dense_oracle(X, y, lengthscales, signal_var, noise_var, x):
    """Kriging formulas with explicit covariance inverses"""
    def corr(A, B):
        diff = (A[:, None, :] - B[None, :, :]) / lengthscales
        return matern52(np.sum(diff ** 2, axis=2))

    C = signal_var * corr(X, X) + noise_var * np.eye(len(y))
    Ci = np.linalg.inv(C)
    ones = np.ones(len(y))
    k = signal_var * corr(x[None, :], X)[0]
    beta = ones @ Ci @ y / (ones @ Ci @ ones)
    yhat = beta + k @ Ci @ (y - beta)
    var = signal_var - k @ Ci @ k + (1.0 - ones @ Ci @ k) ** 2 / (ones @ Ci @ ones)
    return yhat, np.sqrt(max(var, 0.0))


def test_matern_at_zero_is_one():
    assert matern52(np.array([0.0]))[0] == 1.0
    values = matern52(np.array([0.01, 0.5, 2.0, 10.0]))
    assert np.all(np.diff(values) < 0)


@pytest.mark.parametrize("noise_var", [0.0, 0.05])
def test_predictions_match_dense_oracle(rng, noise_var):
    X = rng.uniform(size=(5, 2))
    y = np.sin(3 * X[:, 0]) + X[:, 1]
    lengthscales = np.array([0.4, 0.7])
    model = condition_gp(X, y, lengthscales, 1.3, noise_var)
    for x in rng.uniform(size=(4, 2)):
        yhat, s = predict(model, x)
        ref_yhat, ref_s = _dense_oracle(X, y, lengthscales, 1.3, noise_var, x)
        assert yhat == pytest.approx(ref_yhat, abs=1e-10)
        assert s == pytest.approx(ref_s, abs=1e-8)


def test_noiseless_model_interpolates(rng):
    X = rng.uniform(size=(6, 3))
    y = X @ np.array([1.0, -2.0, 0.5])
    model = condition_gp(X, y, np.full(3, 0.5), 2.0)
    yhat, s = predict_many(model, X)
    np.testing.assert_allclose(yhat, y, atol=1e-8)
    assert np.all(s <= 1e-4 * np.sqrt(model.signal_var))


def test_fitted_noiseless_model_interpolates(rng):
    X = rng.uniform(size=(8, 2))
    y = np.cos(4 * X[:, 0]) * X[:, 1]
    model = fit_gp(X, y, rng=rng, n_starts=3, max_fev=200)
    yhat, _ = predict_many(model, X)
    np.testing.assert_allclose(yhat, y, atol=1e-4)


def test_two_points_are_enough(rng):
    X = np.array([[0.0], [1.0]])
    model = fit_gp(X, [1.0, 3.0], rng=rng, n_starts=2, max_fev=100)
    yhat, _ = predict_many(model, X)
    np.testing.assert_allclose(yhat, [1.0, 3.0], atol=1e-5)


def test_constant_outputs_predict_constant(rng):
    X = rng.uniform(size=(6, 2))
    model = fit_gp(X, np.full(6, 3.5), rng=rng, n_starts=2, max_fev=100)
    assert model.beta == pytest.approx(3.5, abs=1e-8)
    yhat, _ = predict_many(model, rng.uniform(size=(5, 2)))
    np.testing.assert_allclose(yhat, 3.5, atol=1e-6)


def test_far_prediction_reverts_to_prior(rng):
    X = rng.uniform(size=(5, 2))
    model = condition_gp(X, X.sum(axis=1), np.array([0.3, 0.3]), 0.8)
    yhat, s = predict(model, np.array([100.0, -100.0]))
    assert yhat == pytest.approx(model.beta, abs=1e-8)
    assert s >= np.sqrt(model.signal_var) * (1 - 1e-6)


def test_permutation_invariance(rng):
    X = rng.uniform(size=(7, 2))
    y = rng.normal(size=7)
    order = rng.permutation(7)
    a = condition_gp(X, y, np.array([0.5, 0.2]), 1.0, 0.01)
    b = condition_gp(X[order], y[order], np.array([0.5, 0.2]), 1.0, 0.01)
    points = rng.uniform(size=(10, 2))
    for left, right in zip(predict_many(a, points), predict_many(b, points)):
        np.testing.assert_allclose(left, right, atol=1e-10)
    assert a.log_likelihood == pytest.approx(b.log_likelihood, abs=1e-10)


def test_fit_beats_default_start(rng):
    X = rng.uniform(size=(10, 2))
    y = np.sin(5 * X[:, 0]) + 0.2 * X[:, 1]
    model = fit_gp(X, y, rng=rng, n_starts=3, max_fev=300)
    start_value = _Likelihood(X, y, 0.0)(_Likelihood(X, y, 0.0).default_start())
    assert model.log_likelihood >= -start_value - 1e-6


def test_known_noise_is_kept(rng):
    X = rng.uniform(size=(12, 1))
    y = X[:, 0] ** 2 + rng.normal(0.0, 0.01, 12)
    model = fit_gp(X, y, noise_var=1e-4, rng=rng, n_starts=2, max_fev=200)
    assert model.noise_var == 1e-4
    assert model.signal_var > 0


def test_estimated_noise_is_positive(rng):
    X = rng.uniform(size=(20, 1))
    y = np.sin(6 * X[:, 0]) + rng.normal(0.0, 0.3, 20)
    model = fit_gp(X, y, noise_var="estimate", rng=rng, n_starts=3, max_fev=300)
    assert model.noise_var > 0


def test_duplicates_need_noise(rng):
    X = np.array([[0.1, 0.2], [0.1, 0.2], [0.5, 0.9]])
    y = np.array([1.0, 1.1, 2.0])
    with pytest.raises(DuplicateInputs):
        fit_gp(X, y)
    model = fit_gp(X, y, noise_var=0.01, rng=rng, n_starts=2, max_fev=100)
    assert np.isfinite(model.log_likelihood)


def test_shape_errors():
    with pytest.raises(ShapeError):
        fit_gp(np.zeros((1, 2)), [1.0])
    with pytest.raises(ShapeError):
        fit_gp(np.zeros((3, 2)), [1.0, 2.0])


def test_fit_is_deterministic(rng):
    X = rng.uniform(size=(9, 2))
    y = X[:, 0] - X[:, 1] ** 2
    a = fit_gp(X, y, rng=np.random.default_rng(5), n_starts=3, max_fev=150)
    b = fit_gp(X, y, rng=np.random.default_rng(5), n_starts=3, max_fev=150, threads=2)
    np.testing.assert_array_equal(a.lengthscales, b.lengthscales)
    assert a.log_likelihood == b.log_likelihood


@pytest.mark.slow
def test_lengthscales_recovered_from_gp_sample():
    rng = np.random.default_rng(2024)
    X = rng.uniform(size=(200, 2))
    true_lengthscales = np.array([0.2, 0.6])
    diff = (X[:, None, :] - X[None, :, :]) / true_lengthscales
    C = matern52(np.sum(diff ** 2, axis=2)) + 1e-8 * np.eye(200)
    y = 3.0 + np.linalg.cholesky(C) @ rng.standard_normal(200)

    model = fit_gp(X, y, noise_var=1e-8, rng=np.random.default_rng(5), n_starts=5, max_fev=1000)
    ratio = model.lengthscales / true_lengthscales
    assert np.all((ratio > 0.5) & (ratio < 2.0)), model.lengthscales
