"""
Hyperplane transform between mean-one curves and (d-1)-dimensional coordinates
Helmert construction: orthonormal rows annihilating the all-ones direction
"""
from functools import lru_cache

import numpy as np

from .curves import Curve
from .errors import DimensionMismatch, TooFewKnots


@lru_cache(maxsize=32)
def _helmert_rows(d: int) -> np.ndarray:
    basis = np.zeros((d - 1, d))
    for k in range(1, d):
        basis[k - 1, :k] = 1.0
        basis[k - 1, k] = -float(k)
        basis[k - 1] /= np.sqrt(k * (k + 1.0))
    basis.setflags(write=False)
    return basis


class HyperplaneMap:
    """
    Isometry between the hyperplane {x : mean(x) = 1} and R^(d-1)

    forward(x) = basis @ (x - 1), backward(z) = 1 + basis.T @ z
    """

    def __init__(self, d: int):
        if d < 2:
            raise TooFewKnots(f"hyperplane map needs d >= 2, got {d}")
        self.d = int(d)
        self.basis = _helmert_rows(self.d)
        self.center = np.ones(self.d)

    @property
    def p(self) -> int:
        """Coordinate dimension d - 1"""
        return self.d - 1

    def forward(self, curve) -> np.ndarray:
        values = curve.values if isinstance(curve, Curve) else np.asarray(curve, dtype=float)
        if values.shape[-1] != self.d:
            raise DimensionMismatch(f"expected {self.d} curve values, got {values.shape[-1]}")
        return (values - self.center) @ self.basis.T

    def backward(self, coords) -> np.ndarray:
        """Map coordinates (a vector or an m x (d-1) array) back to the hyperplane"""
        coords = np.asarray(coords, dtype=float)
        if coords.shape[-1] != self.p:
            raise DimensionMismatch(f"expected {self.p} coordinates, got {coords.shape[-1]}")
        return self.center + coords @ self.basis
