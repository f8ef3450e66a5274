"""
B-spline basis - evaluation, Gram matrix and L2 projection of interpolated curves
Integrals use composite Gauss-Legendre rules on the merged breakpoints, exact for the piecewise polynomials involved
"""
import logging
import math
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy.interpolate import BSpline, PchipInterpolator
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .curves import Curve, CurveSet, Grid, normalize
from .errors import BadKnots, DimensionMismatch, NonPositiveMean, SingularGram

logger = logging.getLogger(__name__)

DEFAULT_ORDER = 5
DEFAULT_KNOTS = (0.0, 0.0, 0.0, 0.0, 0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0)


def _gauss_rule(breakpoints: np.ndarray, n_nodes: int):
    """Nodes and weights of an n_nodes Gauss-Legendre rule on every nonempty span"""
    ref_nodes, ref_weights = np.polynomial.legendre.leggauss(n_nodes)
    spans = np.unique(breakpoints)
    a, b = spans[:-1], spans[1:]
    half = (b - a) / 2.0
    nodes = (a + half)[:, None] + half[:, None] * ref_nodes[None, :]
    weights = half[:, None] * ref_weights[None, :]
    return nodes.ravel(), weights.ravel()


class SplineBasis:
    """
    Order-m B-spline system B_1..B_K on [0, 1] with its Gram matrix

    K = len(knots) - m; endpoint knots repeated m times give a partition of unity.
    """

    def __init__(self, order: int, knots: Sequence[float]):
        self.order = int(order)
        self.knots = np.asarray(knots, dtype=float)
        self.knots.setflags(write=False)
        self.K = self.knots.size - self.order
        self._spline = BSpline(self.knots, np.eye(self.K), self.order - 1, extrapolate=True)
        self.gram = self._compute_gram()
        self.gram.setflags(write=False)
        self._factor = None
        self._eigenvalues = None

    @property
    def degree(self) -> int:
        return self.order - 1

    def evaluate(self, t) -> np.ndarray:
        """Basis values at t, shape (len(t), K); t is clipped to [0, 1]"""
        t = np.clip(np.atleast_1d(np.asarray(t, dtype=float)), 0.0, 1.0)
        return np.asarray(self._spline(t))

    def _compute_gram(self) -> np.ndarray:
        # B_i B_j has degree 2m - 2 per span; m nodes are exact
        nodes, weights = _gauss_rule(self.knots, self.order)
        B = self.evaluate(nodes)
        gram = B.T @ (weights[:, None] * B)
        return (gram + gram.T) / 2.0

    def gram_factor(self):
        """Cholesky factor of the Gram matrix, checked for positive definiteness"""
        if self._factor is None:
            if not self.gram_is_definite():
                raise SingularGram(f"Gram matrix is not positive definite (eigenvalues "
                                   f"{self._eigenvalues.min():.3g} .. {self._eigenvalues.max():.3g})")
            try:
                self._factor = cho_factor(self.gram, lower=True)
            except LinAlgError as e:
                raise SingularGram(f"Gram matrix Cholesky failed: {e}") from None
        return self._factor

    def gram_is_definite(self) -> bool:
        if self._eigenvalues is None:
            self._eigenvalues = np.linalg.eigvalsh(self.gram)
        return bool(self._eigenvalues.min() > 1e-12 * self._eigenvalues.max())

    def config(self) -> Dict[str, object]:
        return {"order": self.order, "knots": self.knots.tolist()}

    def __repr__(self) -> str:
        return f"SplineBasis(order={self.order}, K={self.K}, knots={self.knots.tolist()})"


def build_basis(order: int = DEFAULT_ORDER, knots: Sequence[float] = DEFAULT_KNOTS) -> SplineBasis:
    """
    Build a B-spline basis after validating the knot vector

    Args:
        order: Spline order m >= 1 (degree m - 1)
        knots: Nondecreasing knots from 0 to 1, each endpoint repeated at least m times

    Returns:
        SplineBasis with its Gram matrix
    """
    if int(order) != order or order < 1:
        raise BadKnots(f"spline order must be an integer >= 1, got {order}")
    order = int(order)
    knots = np.asarray(knots, dtype=float).ravel()
    if knots.size <= order:
        raise BadKnots(f"{knots.size} knots give no basis function of order {order}")
    if not np.all(np.isfinite(knots)) or np.any(np.diff(knots) < 0):
        raise BadKnots("knot vector must be finite and nondecreasing")
    if knots[0] != 0.0 or knots[-1] != 1.0:
        raise BadKnots("knot vector must start at 0 and end at 1")
    if np.any(knots[:order] != 0.0) or np.any(knots[-order:] != 1.0):
        raise BadKnots(f"endpoint knots must be repeated at least {order} times")
    basis = SplineBasis(order, knots)
    # a knot repeated more than m times leaves an identically zero basis function
    if not basis.gram_is_definite():
        raise BadKnots(f"knot vector {knots.tolist()} gives a singular Gram matrix "
                       f"(a knot is repeated more than {order} times)")
    return basis


def project(basis: SplineBasis, curve_function: Callable) -> np.ndarray:
    """
    L2 projection coefficients alpha = G^-1 b, b_k = integral of f B_k over [0, 1]

    When the function exposes `breakpoints` (a CurveInterpolant does), those are merged
    into the quadrature spans so the integrals are exact for cubic pieces.
    """
    extra = getattr(curve_function, "breakpoints", None)
    if extra is not None:
        breakpoints = np.concatenate([basis.knots, np.clip(np.asarray(extra, dtype=float), 0.0, 1.0)])
        n_nodes = max(basis.order, math.ceil((basis.order + 3) / 2))
    else:
        breakpoints = basis.knots
        n_nodes = basis.order + 8
    nodes, weights = _gauss_rule(breakpoints, n_nodes)
    B = basis.evaluate(nodes)
    values = np.broadcast_to(np.asarray(curve_function(nodes), dtype=float), nodes.shape)
    b = B.T @ (weights * values)
    return cho_solve(basis.gram_factor(), b)


def project_curveset(basis: SplineBasis, curves: CurveSet) -> np.ndarray:
    """Coefficients of every curve of the set, shape (n, K)"""
    knots = curves.grid.knots
    if knots.size < 3:
        raise DimensionMismatch(f"projection needs curves on at least 3 knots, got {knots.size}")
    H = curves.matrix()
    breakpoints = np.concatenate([basis.knots, knots])
    nodes, weights = _gauss_rule(breakpoints, max(basis.order, math.ceil((basis.order + 3) / 2)))
    interpolant = PchipInterpolator(knots, H, axis=1, extrapolate=True)
    F = interpolant(np.clip(nodes, knots[0], knots[-1]))
    B = basis.evaluate(nodes)
    rhs = (F * weights[None, :]) @ B
    return cho_solve(basis.gram_factor(), rhs.T).T


def synthesize(basis: SplineBasis, alpha, grid: Grid, diagnostics: Optional[Dict[str, int]] = None) -> Curve:
    """
    Evaluate sum_k alpha_k B_k at the grid knots and normalize to mean one

    Negative knot values are clamped to zero first; the count goes to diagnostics["clamped"].
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.size != basis.K:
        raise DimensionMismatch(f"expected {basis.K} coefficients, got {alpha.size}")
    if not np.all(np.isfinite(alpha)):
        raise NonPositiveMean("coefficients must be finite")
    values = basis.evaluate(grid.knots) @ alpha
    negative = int(np.sum(values < 0))
    if negative:
        logger.debug(f"Clamped {negative} negative synthesized values to zero")
        values = np.maximum(values, 0.0)
    if diagnostics is not None:
        diagnostics["clamped"] = negative
    if values.mean() <= 0:
        raise NonPositiveMean("synthesized curve has no positive mass")
    return normalize(values, grid)


def projection_errors(basis: SplineBasis, curves: CurveSet, alphas: Optional[np.ndarray] = None) -> np.ndarray:
    """Mean square difference between each curve and its normalized spline approximation"""
    alphas = project_curveset(basis, curves) if alphas is None else alphas
    values = basis.evaluate(curves.grid.knots) @ alphas.T
    values = np.maximum(values, 0.0)
    approximations = (values / values.mean(axis=0, keepdims=True)).T
    return np.mean((curves.matrix() - approximations) ** 2, axis=1)
