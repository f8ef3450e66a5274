from dataclasses import replace

import numpy as np
import pytest

from simplex_ego.curves import CurveSet, normalize
from simplex_ego.errors import BadWindow, ConfigError, EmptySet
from simplex_ego.expert_domain import (
    BoundSpec,
    ExpertConfig,
    ExpertDomain,
    GenericConstraint,
    IncrementSpec,
    WindowSpec,
    contains,
    contains_many,
    fit_expert_domain,
    fuel_rod_preset,
    sample_candidates,
)


@pytest.fixture
def small_set():
    return CurveSet.from_matrix([[1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                                 [0.5, 0.8, 1.0, 1.2, 1.3, 1.2]])


@pytest.fixture
def small_config():
    return ExpertConfig(
        bound=BoundSpec(eps=0.05, indices=(1, 6)),
        increment=IncrementSpec(eps=0.03, steps=(1,)),
        max_variation=WindowSpec(j1=2, j2=4, eps=0.03),
        total_variation=WindowSpec(j1=2, j2=4, eps=0.1),
    )


def test_envelopes_and_caps(small_set, small_config):
    domain = fit_expert_domain(small_set, small_config)
    np.testing.assert_allclose(domain.bound.lower, [0.5, 1.0])
    np.testing.assert_allclose(domain.bound.upper, [1.0, 1.2])
    np.testing.assert_allclose(domain.increment.lower, [0.0])
    np.testing.assert_allclose(domain.increment.upper, [0.3])
    assert domain.max_variation.cap == pytest.approx(0.2)
    assert domain.total_variation.cap == pytest.approx(0.5)
    assert [c.name for c in domain.active] == ["bound", "increment", "max_variation", "total_variation"]


def test_history_is_inside(small_set, small_config, abc_history, expert_domain):
    domain = fit_expert_domain(small_set, small_config)
    assert np.all(contains_many(domain, small_set.matrix()))
    assert np.all(contains_many(expert_domain, abc_history.matrix()))


def test_violation_names(small_set, small_config):
    domain = fit_expert_domain(small_set, small_config)
    outside = normalize([1.06, 1.06, 0.96, 0.96, 0.96, 1.0])
    membership = contains(domain, outside)
    assert not membership.inside
    assert membership.violations == ("bound",)


def test_inequalities_are_closed(small_set, small_config):
    domain = fit_expert_domain(small_set, small_config)
    X = small_set.matrix()[:1].copy()
    X[0, 0] = domain.bound.upper[0] + domain.bound.eps
    assert domain.bound.satisfied(X)[0]
    X[0, 0] = np.nextafter(X[0, 0], np.inf)
    assert not domain.bound.satisfied(X)[0]


def test_zero_tolerance_single_curve():
    single = CurveSet.from_matrix([[0.5, 1.0, 1.5, 1.0, 1.0, 1.0]])
    domain = fit_expert_domain(single, ExpertConfig(bound=BoundSpec(eps=0.0)))
    assert contains(domain, single.curves[0]).inside
    assert not contains(domain, normalize(np.ones(6))).inside


def test_more_curves_never_shrink_domain(abc_history, rng):
    config = fuel_rod_preset(abc_history.d)
    small = fit_expert_domain(abc_history.subset(range(20)), config)
    large = fit_expert_domain(abc_history, config)
    X = np.vstack([c.values for c in sample_candidates(small, abc_history.subset(range(20)), 50, rng)])
    assert np.all(contains_many(small, X))
    assert np.all(contains_many(large, X))


def _scaled(config, factor):
    return ExpertConfig(
        bound=replace(config.bound, eps=config.bound.eps * factor),
        increment=replace(config.increment, eps=config.increment.eps * factor),
        max_variation=replace(config.max_variation, eps=config.max_variation.eps * factor),
        total_variation=replace(config.total_variation, eps=config.total_variation.eps * factor),
    )


def test_larger_tolerances_never_shrink_domain(abc_history, rng):
    config = fuel_rod_preset(abc_history.d)
    history = abc_history.subset(range(30))
    scales = np.repeat([0.001, 0.2], 15)[:, None]
    X = history.matrix() + scales * rng.standard_normal((30, abc_history.d))
    X -= X.mean(axis=1, keepdims=True) - 1.0
    accepted = contains_many(fit_expert_domain(history, config), X)
    assert 0 < accepted.sum() < len(X)
    for factor in (1.5, 2.0, 10.0):
        wider = contains_many(fit_expert_domain(history, _scaled(config, factor)), X)
        assert np.all(wider[accepted])
        assert wider.sum() >= accepted.sum()


def test_generic_constraint(small_set):
    cap_first = GenericConstraint("first_cap", lambda H, x: x[0] <= H[:, 0].max())
    domain = fit_expert_domain(small_set, ExpertConfig(generic=(cap_first,)))
    assert contains(domain, small_set.curves[1]).inside
    membership = contains(domain, normalize([1.2, 1.0, 1.0, 1.0, 0.9, 0.9]))
    assert membership.violations == ("first_cap",)


def test_fuel_rod_preset_shifts_windows():
    config = fuel_rod_preset(21)
    assert config.bound.indices == (1, 21)
    assert config.increment.steps == (1, 2, 19, 20)
    assert (config.max_variation.j1, config.max_variation.j2) == (3, 19)
    assert config.total_variation.eps == 0.1
    with pytest.raises(BadWindow):
        fuel_rod_preset(5)


@pytest.mark.parametrize("config", [
    ExpertConfig(max_variation=WindowSpec(j1=3, j2=6, eps=0.1)),
    ExpertConfig(total_variation=WindowSpec(j1=4, j2=4, eps=0.1)),
    ExpertConfig(bound=BoundSpec(indices=(0, 2))),
    ExpertConfig(increment=IncrementSpec(steps=(6,))),
])
def test_bad_windows(small_set, config):
    with pytest.raises(BadWindow):
        fit_expert_domain(small_set, config)


def test_negative_tolerance_is_a_config_error(small_set):
    with pytest.raises(ConfigError):
        fit_expert_domain(small_set, ExpertConfig(bound=BoundSpec(eps=-0.1)))


def test_empty_history():
    with pytest.raises(EmptySet):
        fit_expert_domain(None, ExpertConfig())


def test_dict_round_trip(expert_domain, abc_history, rng):
    rebuilt = ExpertDomain.from_dict(expert_domain.to_dict())
    assert rebuilt.to_dict() == expert_domain.to_dict()
    X = abc_history.matrix()[:10] + rng.normal(0.0, 0.02, (10, abc_history.d))
    np.testing.assert_array_equal(contains_many(rebuilt, X), contains_many(expert_domain, X))


def test_sampled_candidates_are_inside(expert_domain, abc_history, rng):
    candidates = sample_candidates(expert_domain, abc_history, 40, rng)
    assert len(candidates) == 40
    for curve in candidates:
        assert curve.values.mean() == pytest.approx(1.0)
        assert np.all(curve.values >= 0)
    assert np.all(contains_many(expert_domain, np.vstack([c.values for c in candidates])))


def test_sampler_needs_positive_count(expert_domain, abc_history, rng):
    with pytest.raises(ValueError):
        sample_candidates(expert_domain, abc_history, 0, rng)


def test_zero_tolerance_point_domain_samples_the_curve(rng):
    single = CurveSet.from_matrix([[0.5, 1.0, 1.5, 1.0, 1.0, 1.0]])
    domain = fit_expert_domain(single, ExpertConfig(bound=BoundSpec(eps=0.0)))
    for curve in sample_candidates(domain, single, 10, rng):
        np.testing.assert_allclose(curve.values, single.curves[0].values, atol=1e-12)


def test_wide_tolerances_give_new_curves(abc_history, rng, caplog):
    history = abc_history.subset(range(20))
    wide = _scaled(fuel_rod_preset(history.d), 10.0)
    domain = fit_expert_domain(history, wide)
    candidates = np.vstack([c.values for c in sample_candidates(domain, history, 30, rng)])
    assert "fell back" not in caplog.text
    H = history.matrix()
    distances = np.linalg.norm(candidates[:, None, :] - H[None, :, :], axis=2)
    assert distances.min() > 1e-8
    assert np.all(contains_many(domain, candidates))
