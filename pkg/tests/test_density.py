import logging
import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import cholesky
from scipy.stats import norm

from simplex_ego.basis import build_basis
from simplex_ego.density import (
    KdeModel,
    compute_log_threshold,
    compute_threshold,
    density_at,
    fit_bandwidths,
    is_admissible,
    load_model,
    log_density_at,
    loo_log_likelihood,
    marginal_density,
    save_model,
    segment_profile,
    silverman_bandwidths,
)
from simplex_ego.errors import DegenerateData, DimensionMismatch


def _naive_density(alphas, lambdas, x):
    return np.mean(np.prod(norm.pdf((x - alphas) / lambdas) / lambdas, axis=1))


def test_single_point_peak(basis):
    lambdas = np.linspace(0.1, 0.4, basis.K)
    alpha = np.ones(basis.K)
    model = KdeModel(alpha[None, :], lambdas, 0.0, 0.05, basis)
    expected = np.prod(1.0 / (lambdas * math.sqrt(2 * math.pi)))
    assert density_at(model, alpha) == pytest.approx(expected, rel=1e-12)


def test_density_matches_naive_sum(kde_model, rng):
    points = kde_model.alphas[:5] + 0.5 * kde_model.lambdas * rng.standard_normal((5, kde_model.K))
    for x in points:
        naive = _naive_density(kde_model.alphas, kde_model.lambdas, x)
        assert density_at(kde_model, x) == pytest.approx(naive, rel=1e-12)


def test_far_point_has_finite_log_density(kde_model):
    far = np.full(kde_model.K, 1e3)
    assert np.isfinite(log_density_at(kde_model, far))
    assert density_at(kde_model, far) == pytest.approx(0.0, abs=1e-300)


def test_vectorized_density_shape(kde_model):
    values = log_density_at(kde_model, kde_model.alphas[:7])
    assert values.shape == (7,)
    with pytest.raises(DimensionMismatch):
        log_density_at(kde_model, np.ones(kde_model.K + 1))


def test_loo_likelihood_matches_naive(rng):
    alphas = rng.normal(size=(12, 3))
    lambdas = np.array([0.5, 0.8, 1.1])
    naive = 0.0
    for i in range(12):
        others = np.delete(alphas, i, axis=0)
        naive += math.log(_naive_density(others, lambdas, alphas[i]))
    assert loo_log_likelihood(alphas, lambdas) == pytest.approx(naive, rel=1e-10)


def test_fit_bandwidths_improves_on_silverman(kde_model):
    start = silverman_bandwidths(kde_model.alphas)
    assert np.all(kde_model.lambdas > 0)
    assert loo_log_likelihood(kde_model.alphas, kde_model.lambdas) >= loo_log_likelihood(kde_model.alphas, start) - 1e-9


def test_fit_bandwidths_needs_three_points():
    with pytest.raises(DegenerateData):
        fit_bandwidths(np.ones((2, 3)))


def test_constant_column_gets_floor(rng, caplog):
    alphas = rng.normal(size=(30, 3))
    alphas[:, 1] = 0.7
    pooled = alphas.max() - alphas.min()
    with caplog.at_level(logging.WARNING):
        lambdas = fit_bandwidths(alphas, rng=rng, n_starts=1)
    assert lambdas[1] == pytest.approx(1e-6 * pooled)
    assert np.all(lambdas[[0, 2]] > lambdas[1])
    assert "Constant coefficient columns" in caplog.text


def test_two_clusters_shrink_bandwidth(rng):
    alphas = np.concatenate([rng.normal(0.0, 0.1, 50), rng.normal(10.0, 0.1, 50)])[:, None]
    lambdas = fit_bandwidths(alphas, rng=rng, n_starts=2)
    assert lambdas[0] < 1.0


def test_duplicated_points_stay_finite(rng):
    alphas = rng.normal(size=(10, 2))
    lambdas = fit_bandwidths(np.vstack([alphas, alphas]), rng=rng, n_starts=1)
    assert np.all(np.isfinite(lambdas)) and np.all(lambdas > 0)


def test_threshold_one_dimensional_closed_form():
    lam, g, n, delta = 0.2, 0.5, 40, 0.05
    expected = (1.0 / n) * (1.0 / lam) * norm.pdf(delta / (lam * math.sqrt(g)))
    assert compute_threshold([lam], np.array([[g]]), n, delta) == pytest.approx(expected, rel=1e-12)


def test_threshold_tends_to_peak_for_small_delta():
    lambdas = np.array([0.3, 0.1, 0.2])
    peak = (1.0 / 7) * np.prod(1.0 / (lambdas * math.sqrt(2 * math.pi)))
    assert compute_threshold(lambdas, np.eye(3), 7, 1e-9) == pytest.approx(peak, rel=1e-12)


def test_threshold_decreases_with_delta(basis):
    lambdas = np.linspace(0.05, 0.2, basis.K)
    values = [compute_threshold(lambdas, basis.gram, 50, delta) for delta in (0.01, 0.05, 0.1, 0.5)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_threshold_matches_dense_boundary_search():
    lambdas = np.array([0.3, 0.1])
    gram = np.array([[2.0, 0.5], [0.5, 1.0]])
    n, delta = 10, 0.2
    L = cholesky(gram, lower=True)
    angles = np.linspace(0.0, 2 * math.pi, 100_000, endpoint=False)
    u = np.column_stack([np.cos(angles), np.sin(angles)])
    boundary = delta * np.linalg.solve(L.T, u.T).T
    values = np.prod(norm.pdf(boundary / lambdas) / lambdas, axis=1) / n
    threshold = compute_threshold(lambdas, gram, n, delta)
    assert values.min() == pytest.approx(threshold, rel=1e-6)
    assert np.all(values >= threshold * (1 - 1e-12))


def test_points_near_training_are_admissible(kde_model, rng):
    L = cholesky(kde_model.basis.gram, lower=True)
    for i in rng.choice(kde_model.n, size=20, replace=False):
        assert is_admissible(kde_model, kde_model.alphas[i])
        u = rng.standard_normal(kde_model.K)
        step = 0.999 * kde_model.delta * np.linalg.solve(L.T, u / np.linalg.norm(u))
        assert is_admissible(kde_model, kde_model.alphas[i] + step)


def test_admissibility_is_non_strict(kde_model):
    alpha = kde_model.alphas[0] + 3 * kde_model.lambdas
    log_rho = log_density_at(kde_model, alpha)
    assert is_admissible(replace(kde_model, log_threshold=log_rho), alpha)
    assert not is_admissible(replace(kde_model, log_threshold=log_rho + math.log(2.0)), alpha)


def test_save_and_load_round_trip(kde_model, tmp_path):
    path = save_model(kde_model, tmp_path / "model" / "kde_model.json")
    assert (tmp_path / "model" / "kde_model_alphas.csv").exists()
    loaded = load_model(path)
    assert np.array_equal(loaded.alphas, kde_model.alphas)
    assert np.array_equal(loaded.lambdas, kde_model.lambdas)
    assert loaded.log_threshold == kde_model.log_threshold
    assert np.array_equal(loaded.basis.knots, kde_model.basis.knots)


def test_marginal_density_integrates_to_one(kde_model):
    k = 2
    lam = kde_model.lambdas[k]
    column = kde_model.alphas[:, k]
    t = np.linspace(column.min() - 8 * lam, column.max() + 8 * lam, 40_001)
    assert trapezoid(marginal_density(kde_model, k, t), t) == pytest.approx(1.0, abs=1e-6)


def test_segment_profile_columns(kde_model):
    profile = segment_profile(kde_model, kde_model.alphas[0], kde_model.alphas[1])
    assert profile.shape == (101, 3)
    assert profile[0, 0] == pytest.approx(-0.1) and profile[-1, 0] == pytest.approx(1.1)
    assert np.all(profile[:, 1] >= 0)
    assert set(np.unique(profile[:, 2])) <= {0.0, 1.0}


def test_segment_to_isolated_point_is_inadmissible_midway(rng):
    # piecewise-constant basis: Gram = I / 2, so ||v||_G = |v| / sqrt(2)
    basis = build_basis(order=1, knots=(0.0, 0.5, 1.0))
    a = np.array([1.0, 1.0])
    b = np.array([3.0, 3.0])
    alphas = np.vstack([a, a + rng.normal(0.0, 0.05, size=(9, 2)), b])
    lambdas = np.array([0.1, 0.1])
    delta = 0.05
    model = KdeModel(alphas, lambdas, compute_log_threshold(lambdas, basis.gram, alphas.shape[0], delta),
                     delta, basis)

    profile = segment_profile(model, a, b, n_points=121)
    s, admissible = profile[:, 0], profile[:, 2].astype(bool)
    # |s| <= 0.02 keeps the offset within delta of an endpoint in the Gram norm
    assert np.all(admissible[np.abs(s) <= 0.02 + 1e-9])
    assert np.all(admissible[np.abs(s - 1.0) <= 0.02 + 1e-9])
    assert not np.any(admissible[np.abs(s - 0.5) <= 0.2])
