"""
Long reproduction runs on the synthetic (a, b, c) testbed
Run with: pytest -m slow
"""
import numpy as np
import pytest
from scipy.linalg import cholesky
from scipy.optimize import minimize
from scipy.stats import norm

from simplex_ego.acquisition import ExpertSpace, KdeSpace, expected_improvement
from simplex_ego.basis import build_basis, project, projection_errors
from simplex_ego.curves import interpolate
from simplex_ego.density import compute_log_threshold, fit_kde, is_admissible
from simplex_ego.expert_domain import contains_many, fit_expert_domain, fuel_rod_preset
from simplex_ego.optimizer import EgoSettings, Objective, run_ego
from simplex_ego.testbed import (
    AbcFamily,
    DistanceSineObjective,
    abc_sampler,
    brute_force_max,
    gen_abc_history,
    make_abc_anchor,
    make_abc_scenario,
)

pytestmark = pytest.mark.slow

SEEDS = range(10)


@pytest.fixture(scope="module")
def scenario():
    return make_abc_scenario(n=1000, seed=0)


def test_ei_matches_monte_carlo_on_random_triples():
    rng = np.random.default_rng(0)
    for _ in range(50):
        y_plugin, yhat = rng.normal(size=2)
        s = rng.uniform(0.05, 2.0)
        draws = rng.normal(yhat, s, 10_000_000)
        improvement = np.maximum(y_plugin - draws, 0.0)
        se = improvement.std() / np.sqrt(draws.size)
        assert abs(expected_improvement(y_plugin, yhat, s) - improvement.mean()) <= 3 * se + 1e-12


@pytest.mark.parametrize("K", [2, 4, 8])
def test_threshold_matches_boundary_search(K):
    rng = np.random.default_rng(K)
    for _ in range(10):
        lambdas = rng.uniform(0.05, 0.2, K)
        A = rng.normal(size=(K, K))
        gram = A @ A.T / K + 0.1 * np.eye(K)
        delta = rng.uniform(0.02, 0.1)
        n = 100
        L = cholesky(gram, lower=True)

        def boundary(u):
            u = np.atleast_2d(u)
            u = u / np.linalg.norm(u, axis=1, keepdims=True)
            return delta * np.linalg.solve(L.T, u.T).T

        def log_value(alpha):
            return (np.sum(norm.logpdf(alpha / lambdas) - np.log(lambdas), axis=1) - np.log(n))

        U = rng.standard_normal((1_000_000, K))
        values = log_value(boundary(U))
        best = values.min()
        for start in U[np.argsort(values)[:5]]:
            result = minimize(lambda u: log_value(boundary(u))[0], start, method="BFGS")
            best = min(best, result.fun)
        log_threshold = compute_log_threshold(lambdas, gram, n, delta)
        assert np.all(values >= log_threshold - 1e-9)
        assert abs(np.exp(best - log_threshold) - 1.0) < 0.005


def test_guarantee_on_delta_ellipsoid(scenario):
    basis = build_basis()
    model = fit_kde(basis, scenario.history.subset(range(300)), rng=np.random.default_rng(0), n_starts=2)
    L = cholesky(basis.gram, lower=True)
    rng = np.random.default_rng(1)
    for i in rng.integers(model.n, size=100):
        u = rng.standard_normal(model.K)
        alpha = model.alphas[i] + model.delta * np.linalg.solve(L.T, u / np.linalg.norm(u))
        assert is_admissible(model, alpha)


def test_brute_force_reference():
    objective = DistanceSineObjective(make_abc_anchor())
    value, _ = brute_force_max(objective.values, abc_sampler(), 1_000_000, np.random.default_rng(0))
    assert -0.10 <= value <= -0.06


def _bench(scenario, space):
    objective = Objective(scenario.objective, scenario.noise_sd, name=scenario.name)
    init, final = [], []
    for seed in SEEDS:
        settings = EgoSettings(n_init=scenario.n_init, n_iter=scenario.n_iter, seed=seed)
        _, report = run_ego(objective, space, settings)
        init.append(report.best_init)
        final.append(report.best_observed)
    return np.array(init), np.array(final)


def test_kde_reproduction(scenario):
    model = fit_kde(build_basis(), scenario.history, delta=0.05, rng=np.random.default_rng(0))
    init, final = _bench(scenario, KdeSpace(model, scenario.history.grid))
    assert -1.3 <= np.median(init) <= -0.5
    assert np.median(final) >= -0.35
    assert np.all(final >= init)


def test_expert_reproduction(scenario):
    domain = fit_expert_domain(scenario.history, fuel_rod_preset(scenario.history.d))
    init, final = _bench(scenario, ExpertSpace(domain, scenario.history))
    assert np.median(final) >= -0.65
    assert np.median(final) > np.median(init)


def test_history_always_inside_expert_domain():
    for seed in range(20):
        history = gen_abc_history(200, seed=100 + seed)
        domain = fit_expert_domain(history, fuel_rod_preset(history.d))
        assert np.all(contains_many(domain, history.matrix()))


def test_projection_oracle_on_family_curves():
    basis = build_basis()
    t = np.linspace(0.0, 1.0, 10_000)
    w = np.full(t.size, t[1] - t[0])
    w[[0, -1]] /= 2.0
    B = basis.evaluate(t)
    history = gen_abc_history(20, seed=42, family=AbcFamily())
    for curve in history.curves:
        f = interpolate(curve)
        alpha = project(basis, f)
        reference = np.linalg.lstsq(B * np.sqrt(w)[:, None], f(t) * np.sqrt(w), rcond=None)[0]
        assert np.sqrt(np.mean((B @ alpha - B @ reference) ** 2)) < 1e-4
    assert np.all(projection_errors(basis, history) < 1.0)
