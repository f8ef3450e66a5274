"""
Shared fixtures for the simplex-ego test suite
Small synthetic histories and a fitted KDE model reused across modules
"""
import numpy as np
import pytest

from simplex_ego.basis import build_basis
from simplex_ego.density import fit_kde
from simplex_ego.expert_domain import fit_expert_domain, fuel_rod_preset
from simplex_ego.testbed import gen_abc_history


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def abc_history():
    return gen_abc_history(80, seed=3)


@pytest.fixture(scope="session")
def basis():
    return build_basis()


@pytest.fixture(scope="session")
def kde_model(basis, abc_history):
    return fit_kde(basis, abc_history, delta=0.05, rng=np.random.default_rng(7), n_starts=2)


@pytest.fixture(scope="session")
def expert_domain(abc_history):
    return fit_expert_domain(abc_history, fuel_rod_preset(abc_history.d))
