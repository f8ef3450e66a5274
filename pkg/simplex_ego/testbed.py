"""
Analytic testbeds - distance-sine objective and the (a, b, c) cosine curve family
Synthetic histories, anchors, brute-force references and the noisy holdout scenario
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .basis import SplineBasis, build_basis, project_curveset, synthesize
from .curves import Curve, CurveSet, Grid, normalize
from .errors import ConfigError, DataError, DimensionMismatch

logger = logging.getLogger(__name__)

ABC_RANGES = ((4.0, 12.0), (2.0, 5.0), (0.8, 1.2))
ABC_D = 21
ABC_ANCHOR = (12.0, 6.0, 1.0)
HOLDOUT_NOISE_SD = 0.0005


class DistanceSineObjective:
    """y(x) = -|x - x0| - sin(3 |x - x0|)^2, maximal (zero) at the anchor x0"""

    def __init__(self, anchor: Curve):
        self.anchor = anchor

    def values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.anchor.d:
            raise DimensionMismatch(f"expected {self.anchor.d} values, got {X.shape[1]}")
        dist = np.linalg.norm(X - self.anchor.values, axis=1)
        return -dist - np.sin(3.0 * dist) ** 2

    def __call__(self, curve: Curve) -> float:
        if curve.grid != self.anchor.grid:
            raise DimensionMismatch("curve and anchor live on different grids")
        return float(self.values(curve.values[None, :])[0])


def eval_distance_sine(x: Curve, x0: Curve, noise_sd: float = 0.0,
                       rng: Optional[np.random.Generator] = None) -> float:
    """Distance-sine value at x plus Normal(0, noise_sd^2) noise"""
    value = DistanceSineObjective(x0)(x)
    if noise_sd > 0:
        rng = rng if rng is not None else np.random.default_rng()
        value += float(rng.normal(0.0, noise_sd))
    return value


@dataclass(frozen=True)
class AbcFamily:
    """x_abc(t) = (1 + cos(a t) + b t + exp(c t)) / C_abc on d equispaced knots"""

    ranges: Tuple[Tuple[float, float], ...] = ABC_RANGES
    d: int = ABC_D

    @property
    def grid(self) -> Grid:
        return Grid.equispaced(self.d)

    def sample_params(self, count: int, rng: np.random.Generator) -> np.ndarray:
        low = np.array([r[0] for r in self.ranges])
        high = np.array([r[1] for r in self.ranges])
        return rng.uniform(low, high, size=(count, 3))

    def curve(self, a: float, b: float, c: float) -> Curve:
        return normalize(abc_curves(np.array([[a, b, c]]), self.grid)[0], self.grid)


def abc_curves(params, grid: Optional[Grid] = None) -> np.ndarray:
    """Family members for every (a, b, c) row, as an m x d matrix of mean-one rows"""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    t = (grid or Grid.equispaced(ABC_D)).knots
    a, b, c = params[:, 0:1], params[:, 1:2], params[:, 2:3]
    raw = 1.0 + np.cos(a * t) + b * t + np.exp(c * t)
    return raw / raw.mean(axis=1, keepdims=True)


def gen_abc_history(n: int, seed: int = 0, family: AbcFamily = AbcFamily()) -> CurveSet:
    """n family curves with (a, b, c) uniform on the box"""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    params = family.sample_params(n, rng)
    return CurveSet.from_matrix(abc_curves(params, family.grid), family.grid)


def make_abc_anchor(family: AbcFamily = AbcFamily()) -> Curve:
    """x_{12,6,1}, just outside the sampled family since b = 6 > 5"""
    return family.curve(*ABC_ANCHOR)


def abc_sampler(family: AbcFamily = AbcFamily()) -> Callable[[int, np.random.Generator], np.ndarray]:
    def sample(count: int, rng: np.random.Generator) -> np.ndarray:
        return abc_curves(family.sample_params(count, rng), family.grid)
    return sample


def brute_force_max(objective: Callable[[np.ndarray], np.ndarray],
                    sampler: Callable[[int, np.random.Generator], np.ndarray],
                    n_samples: int, rng: np.random.Generator,
                    chunk_size: int = 100_000) -> Tuple[float, np.ndarray]:
    """
    Best objective value over n_samples feasible draws

    Args:
        objective: Vectorized objective, m x d -> m values
        sampler: Draws an m x d matrix of feasible inputs from the stream
        n_samples: Total draws, >= 1, taken in chunks
        rng: Random stream

    Returns:
        (best value, best input); draws are a prefix-stable stream so the value
        never decreases as n_samples grows
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    best_value, best_input = -math.inf, None
    done = 0
    while done < n_samples:
        count = min(chunk_size, n_samples - done)
        X = sampler(count, rng)
        values = objective(X)
        i = int(np.argmax(values))
        if values[i] > best_value:
            best_value, best_input = float(values[i]), X[i].copy()
        done += count
    logger.info(f"Brute force over {n_samples} draws: max {best_value:.6f}")
    return best_value, best_input


@dataclass(frozen=True)
class Scenario:
    """A historical set, an objective on curves and the evaluation protocol"""

    name: str
    history: CurveSet
    objective: DistanceSineObjective
    noise_sd: float
    n_init: int
    n_iter: int


def make_abc_scenario(n: int = 1000, seed: int = 0) -> Scenario:
    """Noiseless distance-sine to the out-of-family anchor, 30 + 30 evaluations"""
    family = AbcFamily()
    return Scenario("abc_general", gen_abc_history(n, seed, family),
                    DistanceSineObjective(make_abc_anchor(family)), 0.0, 30, 30)


def make_distance_sine_scenario(history: CurveSet, method: str = "expert", holdout: int = 0,
                                basis: Optional[SplineBasis] = None,
                                noise_sd: float = HOLDOUT_NOISE_SD) -> Scenario:
    """
    Noisy distance-sine scenario with a held-out historical curve as the anchor

    The anchor is the held-out curve itself (expert method) or the normalized spline
    synthesis of its coefficients (kde method); the rest of the set is the history.
    Protocol: 100 initial points and 50 EI iterations.
    """
    if history.n < 2:
        raise DataError("the scenario needs at least 2 historical curves")
    if not 0 <= holdout < history.n:
        raise ConfigError(f"holdout {holdout} outside a set of {history.n} curves")
    rest = history.subset([i for i in range(history.n) if i != holdout])
    anchor = history.curves[holdout]
    if method == "kde":
        basis = basis or build_basis()
        alpha = project_curveset(basis, history.subset([holdout]))[0]
        anchor = synthesize(basis, alpha, history.grid)
    elif method != "expert":
        raise ConfigError(f"unknown domain method '{method}'")
    return Scenario("distance_sine", rest, DistanceSineObjective(anchor), noise_sd, 100, 50)
