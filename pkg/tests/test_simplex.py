import numpy as np
import pytest

from simplex_ego.curves import normalize
from simplex_ego.errors import DimensionMismatch, TooFewKnots
from simplex_ego.simplex import HyperplaneMap


@pytest.mark.parametrize("d", [2, 3, 8, 21])
def test_basis_is_orthonormal_and_annihilates_ones(d):
    hmap = HyperplaneMap(d)
    np.testing.assert_allclose(hmap.basis @ hmap.basis.T, np.eye(d - 1), atol=1e-10)
    np.testing.assert_allclose(hmap.basis @ np.ones(d), 0.0, atol=1e-10)
    assert hmap.p == d - 1


def test_center_maps_to_origin():
    hmap = HyperplaneMap(5)
    np.testing.assert_allclose(hmap.forward(normalize(np.ones(5))), 0.0, atol=1e-15)
    np.testing.assert_allclose(hmap.backward(np.zeros(4)), np.ones(5))


def test_round_trip_and_isometry(rng):
    hmap = HyperplaneMap(21)
    u = normalize(rng.uniform(0.2, 2.0, 21))
    v = normalize(rng.uniform(0.2, 2.0, 21))
    np.testing.assert_allclose(hmap.backward(hmap.forward(u)), u.values, atol=1e-10)
    distance = np.linalg.norm(hmap.forward(u) - hmap.forward(v))
    assert distance == pytest.approx(np.linalg.norm(u.values - v.values), abs=1e-10)


def test_backward_has_mean_one(rng):
    hmap = HyperplaneMap(9)
    X = hmap.backward(rng.normal(size=(50, 8)))
    np.testing.assert_allclose(X.mean(axis=1), 1.0, atol=1e-12)


def test_vectorized_forward_matches_rows(rng):
    hmap = HyperplaneMap(6)
    X = np.vstack([normalize(rng.uniform(0.1, 1.0, 6)).values for _ in range(4)])
    Z = hmap.forward(X)
    for row, z in zip(X, Z):
        np.testing.assert_allclose(hmap.forward(row), z)


def test_same_d_same_basis():
    assert np.array_equal(HyperplaneMap(7).basis, HyperplaneMap(7).basis)


def test_dimension_errors():
    hmap = HyperplaneMap(4)
    with pytest.raises(DimensionMismatch):
        hmap.forward(normalize(np.ones(5)))
    with pytest.raises(DimensionMismatch):
        hmap.backward(np.zeros(4))
    with pytest.raises(TooFewKnots):
        HyperplaneMap(1)
