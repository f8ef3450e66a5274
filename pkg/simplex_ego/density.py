"""
Kernel density domain - Gaussian product KDE over spline coefficients
Leave-one-out bandwidths, admissibility threshold and model persistence
"""
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular
from scipy.optimize import minimize
from scipy.special import logsumexp

from .basis import SplineBasis, build_basis, project_curveset
from .curves import CurveSet
from .errors import DegenerateData, DimensionMismatch, ParseError, SingularGram

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.05
LOG_2PI = math.log(2.0 * math.pi)

# Row blocks keep the (rows, n, K) difference tensor around this many floats
_BLOCK_FLOATS = 2_000_000


@dataclass(frozen=True)
class KdeModel:
    """Fitted density over coefficient vectors with its admissibility threshold"""

    alphas: np.ndarray
    lambdas: np.ndarray
    log_threshold: float
    delta: float
    basis: SplineBasis

    @property
    def n(self) -> int:
        return int(self.alphas.shape[0])

    @property
    def K(self) -> int:
        return int(self.alphas.shape[1])

    @property
    def threshold(self) -> float:
        return math.exp(self.log_threshold)

    def summary(self) -> dict:
        return {"n": self.n, "K": self.K, "delta": self.delta,
                "lambdas": self.lambdas.tolist(), "threshold": self.threshold,
                "log_threshold": self.log_threshold}


def _log_kernel_sums(alphas: np.ndarray, lambdas: np.ndarray, points: np.ndarray) -> np.ndarray:
    """log sum_i exp(-|(x - alpha_i) / lambda|^2 / 2) for every row x of points"""
    scaled = alphas / lambdas
    points = points / lambdas
    rows = max(1, _BLOCK_FLOATS // max(1, scaled.size))
    out = np.empty(points.shape[0])
    for start in range(0, points.shape[0], rows):
        block = points[start:start + rows]
        sq = np.sum((block[:, None, :] - scaled[None, :, :]) ** 2, axis=2)
        out[start:start + rows] = logsumexp(-0.5 * sq, axis=1)
    return out


def log_density_at(model: KdeModel, alpha) -> Union[float, np.ndarray]:
    """
    Log of the KDE at alpha (a K-vector or an m x K array), finite for finite input
    """
    alpha = np.asarray(alpha, dtype=float)
    points = np.atleast_2d(alpha)
    if points.shape[1] != model.K:
        raise DimensionMismatch(f"expected {model.K} coefficients, got {points.shape[1]}")
    norm = -math.log(model.n) - np.sum(np.log(model.lambdas)) - 0.5 * model.K * LOG_2PI
    values = _log_kernel_sums(model.alphas, model.lambdas, points) + norm
    return float(values[0]) if alpha.ndim == 1 else values


def density_at(model: KdeModel, alpha) -> Union[float, np.ndarray]:
    """(1/n) sum_i prod_k phi((alpha_k - alpha_ik) / lambda_k) / lambda_k"""
    return np.exp(log_density_at(model, alpha))


def loo_log_likelihood(alphas: np.ndarray, lambdas: np.ndarray) -> float:
    """Sum over i of log rho^{-i}(alpha_i), the bandwidth selection criterion"""
    n, K = alphas.shape
    scaled = alphas / lambdas
    rows = max(1, _BLOCK_FLOATS // max(1, scaled.size))
    total = 0.0
    for start in range(0, n, rows):
        block = scaled[start:start + rows]
        sq = -0.5 * np.sum((block[:, None, :] - scaled[None, :, :]) ** 2, axis=2)
        idx = np.arange(block.shape[0])
        sq[idx, start + idx] = -np.inf
        total += float(np.sum(logsumexp(sq, axis=1)))
    return total - n * (math.log(n - 1) + float(np.sum(np.log(lambdas))) + 0.5 * K * LOG_2PI)


def silverman_bandwidths(alphas: np.ndarray) -> np.ndarray:
    n, K = alphas.shape
    sd = alphas.std(axis=0, ddof=1)
    return sd * (4.0 / ((K + 2.0) * n)) ** (1.0 / (K + 4.0))


def fit_bandwidths(alphas: np.ndarray, rng: Optional[np.random.Generator] = None,
                   n_starts: int = 5, threads: int = 1, max_iter: Optional[int] = None) -> np.ndarray:
    """
    Leave-one-out maximum likelihood bandwidths

    Nelder-Mead in log(lambda) from the Silverman rule plus jittered restarts; the
    result never scores below the Silverman start. Constant coefficient columns get
    a fixed floor bandwidth.

    Args:
        alphas: n x K training coefficients, n >= 3
        rng: Stream for the jittered starts
        n_starts: Total number of starts, the first being the Silverman rule
        threads: Worker threads for the starts

    Returns:
        K positive bandwidths
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 2 or alphas.shape[0] < 3:
        raise DegenerateData(f"bandwidth selection needs at least 3 coefficient vectors, got shape {alphas.shape}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n, K = alphas.shape

    pooled_range = float(alphas.max() - alphas.min())
    floor = 1e-6 * (pooled_range if pooled_range > 0 else 1.0)
    spread = alphas.max(axis=0) - alphas.min(axis=0)
    free = spread > 0
    if not np.all(free):
        logger.warning(f"Constant coefficient columns {np.flatnonzero(~free).tolist()}: bandwidth floored at {floor:.3g}")

    start = np.full(K, floor)
    start[free] = np.maximum(silverman_bandwidths(alphas)[free], floor)
    if not np.any(free):
        return start

    lower = np.log(floor)
    upper = np.log(1e3 * spread[free])
    bounds = list(zip(np.full(free.sum(), lower), upper))

    def full(log_free: np.ndarray) -> np.ndarray:
        lambdas = start.copy()
        lambdas[free] = np.exp(log_free)
        return lambdas

    def objective(log_free: np.ndarray) -> float:
        return -loo_log_likelihood(alphas, full(log_free))

    x0 = np.log(start[free])
    starts = [x0] + [np.clip(x0 + 0.5 * rng.standard_normal(x0.size), lower, upper)
                     for _ in range(max(0, n_starts - 1))]
    options = {"maxiter": max_iter or 200 * x0.size, "xatol": 1e-4, "fatol": 1e-8}

    def run(x_start: np.ndarray):
        result = minimize(objective, x_start, method="Nelder-Mead", bounds=bounds, options=options)
        return float(result.fun), result.x

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    best_value, best_x = objective(x0), x0
    for value, x in results:
        if value < best_value:
            best_value, best_x = value, x
    lambdas = full(best_x)
    logger.info(f"Bandwidths from {len(starts)} starts: LOO log-likelihood {-best_value:.4f}, "
                f"lambda = {np.array2string(lambdas, precision=4)}")
    return lambdas


def compute_log_threshold(lambdas, gram: np.ndarray, n: int, delta: float) -> float:
    """
    log T where T = min over {alpha' G alpha <= delta^2} of (1/n) prod_k phi(alpha_k / lambda_k) / lambda_k

    The minimum sits where sum_k alpha_k^2 / lambda_k^2 is largest on the ellipsoid,
    i.e. delta^2 times the top generalized eigenvalue of (diag(1/lambda^2), G).
    """
    lambdas = np.asarray(lambdas, dtype=float)
    gram = np.asarray(gram, dtype=float)
    if gram.shape != (lambdas.size, lambdas.size):
        raise DimensionMismatch(f"Gram matrix {gram.shape} does not match {lambdas.size} bandwidths")
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    try:
        L = cholesky(gram, lower=True)
    except LinAlgError as e:
        raise SingularGram(f"Gram matrix Cholesky failed: {e}") from None
    left = solve_triangular(L, np.diag(1.0 / lambdas ** 2), lower=True)
    reduced = solve_triangular(L, left.T, lower=True)
    mu_max = float(eigh((reduced + reduced.T) / 2.0, eigvals_only=True)[-1])
    return (-math.log(n) - 0.5 * lambdas.size * LOG_2PI - float(np.sum(np.log(lambdas)))
            - 0.5 * delta ** 2 * mu_max)


def compute_threshold(lambdas, gram: np.ndarray, n: int, delta: float) -> float:
    return math.exp(compute_log_threshold(lambdas, gram, n, delta))


def admissible_many(model: KdeModel, alphas: np.ndarray) -> np.ndarray:
    return np.atleast_1d(log_density_at(model, np.atleast_2d(alphas))) >= model.log_threshold


def is_admissible(model: KdeModel, alpha) -> bool:
    """rho(alpha) >= T on the raw coefficient vector, compared in log space"""
    return bool(log_density_at(model, np.asarray(alpha, dtype=float).ravel()) >= model.log_threshold)


def fit_kde(basis: SplineBasis, curves: CurveSet, delta: float = DEFAULT_DELTA,
            rng: Optional[np.random.Generator] = None, n_starts: int = 5, threads: int = 1,
            alphas: Optional[np.ndarray] = None) -> KdeModel:
    """Project the curves, select bandwidths and compute the threshold"""
    alphas = project_curveset(basis, curves) if alphas is None else np.asarray(alphas, dtype=float)
    lambdas = fit_bandwidths(alphas, rng=rng, n_starts=n_starts, threads=threads)
    log_threshold = compute_log_threshold(lambdas, basis.gram, alphas.shape[0], delta)
    alphas = alphas.copy()
    alphas.setflags(write=False)
    lambdas.setflags(write=False)
    model = KdeModel(alphas, lambdas, log_threshold, float(delta), basis)
    logger.info(f"KDE domain: n={model.n}, K={model.K}, delta={delta}, log T = {log_threshold:.4f}")
    return model


def marginal_density(model: KdeModel, k: int, points) -> np.ndarray:
    """Density of coordinate k alone, a 1-D Gaussian mixture"""
    points = np.atleast_1d(np.asarray(points, dtype=float))
    lam = model.lambdas[k]
    z = (points[:, None] - model.alphas[None, :, k]) / lam
    return np.exp(-0.5 * z ** 2).mean(axis=1) / (lam * math.sqrt(2.0 * math.pi))


def segment_profile(model: KdeModel, a, b, n_points: int = 101) -> np.ndarray:
    """
    Columns (s, log(1 + rho), admissible) along alpha = a + s (b - a), s in [-0.1, 1.1]
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.linspace(-0.1, 1.1, n_points)
    points = a[None, :] + s[:, None] * (b - a)[None, :]
    log_rho = log_density_at(model, points)
    return np.column_stack([s, np.logaddexp(0.0, log_rho), log_rho >= model.log_threshold])


def save_model(model: KdeModel, path: Union[str, Path]) -> Path:
    """Write the model JSON and its coefficient CSV next to it"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    alphas_path = path.with_name(path.stem + "_alphas.csv")
    with open(alphas_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        for row in model.alphas:
            writer.writerow([repr(float(v)) for v in row])
    document = {
        "type": "kde",
        "alphas": alphas_path.name,
        "lambdas": model.lambdas.tolist(),
        "log_threshold": model.log_threshold,
        "threshold": model.threshold,
        "delta": model.delta,
        "basis": model.basis.config(),
    }
    path.write_text(json.dumps(document, indent=2), encoding="utf-8")
    return path


def load_model(path: Union[str, Path]) -> KdeModel:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
        alphas_path = path.parent / document["alphas"]
        with open(alphas_path, newline="", encoding="utf-8") as handle:
            alphas = np.array([[float(v) for v in row] for row in csv.reader(handle) if row])
        basis = build_basis(document["basis"]["order"], document["basis"]["knots"])
        lambdas = np.asarray(document["lambdas"], dtype=float)
        log_threshold = float(document["log_threshold"])
        delta = float(document["delta"])
    except (OSError, KeyError, ValueError, TypeError) as e:
        raise ParseError(f"{path}: not a KDE model document ({e})") from None
    alphas.setflags(write=False)
    lambdas.setflags(write=False)
    return KdeModel(alphas, lambdas, log_threshold, delta, basis)
