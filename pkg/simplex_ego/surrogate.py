"""
Gaussian-process surrogate - anisotropic Matern-5/2 kriging with a constant mean
Maximum likelihood hyperparameters by multistart Nelder-Mead in log coordinates
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky
from scipy.optimize import minimize

from .errors import DimensionMismatch, DuplicateInputs, IllConditioned, ShapeError

logger = logging.getLogger(__name__)

SQRT5 = math.sqrt(5.0)
LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-10
JITTER_MAX = 1e-6
ESTIMATE = "estimate"


def matern52(sq_scaled: np.ndarray) -> np.ndarray:
    """Matern-5/2 correlation from squared scaled distances"""
    r = np.sqrt(np.maximum(sq_scaled, 0.0))
    return (1.0 + SQRT5 * r + (5.0 / 3.0) * r * r) * np.exp(-SQRT5 * r)


def _sq_scaled(A: np.ndarray, B: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    A = A / lengthscales
    B = B / lengthscales
    sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T
    return np.maximum(sq, 0.0)


def _factor(R: np.ndarray, strict: bool):
    """Cholesky of R with jitter escalation; returns (factor, jitter) or None when not strict"""
    n = R.shape[0]
    jitter = 0.0
    while True:
        try:
            L = cholesky(R + jitter * np.eye(n), lower=True)
            return L, jitter
        except LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1.0 + 1e-9):
                if strict:
                    raise IllConditioned(f"covariance still singular with jitter {JITTER_MAX:g} sigma^2") from None
                return None


@dataclass(frozen=True)
class GpSurrogate:
    """
    Fitted GP; covariance = signal_var * (R + (noise_var / signal_var + jitter) I)

    Predictions are for the latent noise-free function.
    """

    inputs: np.ndarray
    outputs: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    beta: float
    jitter: float
    log_likelihood: float
    chol: np.ndarray
    weights: np.ndarray
    ones_solve: np.ndarray
    ones_quad: float

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def p(self) -> int:
        return int(self.inputs.shape[1])

    def summary(self) -> dict:
        return {
            "n": self.n,
            "p": self.p,
            "lengthscales": self.lengthscales.tolist(),
            "signal_var": self.signal_var,
            "noise_var": self.noise_var,
            "beta": self.beta,
            "jitter": self.jitter,
            "log_likelihood": self.log_likelihood,
        }


def condition_gp(inputs, outputs, lengthscales, signal_var: float, noise_var: float = 0.0) -> GpSurrogate:
    """
    Condition a GP with fixed hyperparameters on the data

    The constant mean is the generalized least squares estimate.
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(outputs, dtype=float).ravel()
    lengthscales = np.asarray(lengthscales, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ShapeError(f"{X.shape[0]} inputs for {y.size} outputs")
    if lengthscales.size != X.shape[1]:
        raise DimensionMismatch(f"{lengthscales.size} lengthscales for {X.shape[1]} input dimensions")
    if signal_var <= 0 or noise_var < 0:
        raise ValueError("signal variance must be > 0 and noise variance >= 0")

    n = y.size
    R = matern52(_sq_scaled(X, X, lengthscales)) + (noise_var / signal_var) * np.eye(n)
    L, jitter = _factor(R, strict=True)
    if jitter:
        logger.warning(f"GP covariance needed jitter {jitter:g} sigma^2")
    factor = (L, True)
    ones_solve = cho_solve(factor, np.ones(n))
    ones_quad = float(np.sum(ones_solve))
    beta = float(ones_solve @ y / ones_quad)
    residual = y - beta
    weights = cho_solve(factor, residual)
    log_likelihood = (-0.5 * float(residual @ weights) / signal_var
                      - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * math.log(signal_var) - 0.5 * n * LOG_2PI)
    for array in (X, y, lengthscales, L, weights, ones_solve):
        array.setflags(write=False)
    return GpSurrogate(X, y, lengthscales, float(signal_var), float(noise_var), beta, jitter,
                       log_likelihood, L, weights, ones_solve, ones_quad)


def predict_many(model: GpSurrogate, X) -> Tuple[np.ndarray, np.ndarray]:
    """Universal-kriging mean and standard deviation at every row of X"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.p:
        raise DimensionMismatch(f"expected {model.p} input coordinates, got {X.shape[1]}")
    r = matern52(_sq_scaled(X, model.inputs, model.lengthscales))
    yhat = model.beta + r @ model.weights
    v = cho_solve((model.chol, True), r.T)
    correction = (1.0 - model.ones_solve @ r.T) ** 2 / model.ones_quad
    var = model.signal_var * (1.0 - np.sum(r.T * v, axis=0) + correction)
    return yhat, np.sqrt(np.maximum(var, 0.0))


def predict(model: GpSurrogate, x) -> Tuple[float, float]:
    yhat, s = predict_many(model, np.asarray(x, dtype=float).reshape(1, -1))
    return float(yhat[0]), float(s[0])


def log_likelihood(model: GpSurrogate) -> float:
    return model.log_likelihood


class _Likelihood:
    """
    Negative log marginal likelihood over log hyperparameters

    Parameter layout: log lengthscales, then log(noise/signal) when the noise is
    estimated, then log signal variance when a positive noise variance is known.
    With zero or estimated noise the signal variance is profiled out.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, noise_var: Union[float, str]):
        self.X = X
        self.y = y
        self.n, self.p = X.shape
        self.estimate_noise = noise_var == ESTIMATE
        self.noise_var = 0.0 if self.estimate_noise else float(noise_var)
        self.profile_signal = self.estimate_noise or self.noise_var == 0.0
        diffs = X[:, None, :] - X[None, :, :]
        self.sq_diffs = np.moveaxis(diffs * diffs, 2, 0)
        span = X.max(axis=0) - X.min(axis=0)
        self.span = np.where(span > 0, span, 1.0)
        self.y_var = float(np.var(y)) if np.var(y) > 0 else 1.0
        self.floor = 1e-12 * max(1.0, float(np.mean(y * y)))

    def bounds(self):
        bounds = [(math.log(1e-3 * s), math.log(1e3 * s)) for s in self.span]
        if self.estimate_noise:
            bounds.append((math.log(1e-10), math.log(10.0)))
        if not self.profile_signal:
            scale = max(self.y_var, self.noise_var)
            bounds.append((math.log(1e-6 * scale), math.log(1e3 * scale)))
        return bounds

    def default_start(self) -> np.ndarray:
        start = list(np.log(0.5 * self.span))
        if self.estimate_noise:
            start.append(math.log(1e-3))
        if not self.profile_signal:
            start.append(math.log(max(self.y_var, self.noise_var)))
        return np.array(start)

    def unpack(self, theta: np.ndarray):
        lengthscales = np.exp(theta[:self.p])
        rest = theta[self.p:]
        ratio = math.exp(rest[0]) if self.estimate_noise else None
        signal_var = math.exp(rest[-1]) if not self.profile_signal else None
        return lengthscales, ratio, signal_var

    def hyperparameters(self, theta: np.ndarray) -> Tuple[np.ndarray, float, float]:
        """(lengthscales, signal variance, noise variance) at theta"""
        lengthscales, ratio, signal_var = self.unpack(theta)
        R = matern52(np.tensordot(1.0 / lengthscales ** 2, self.sq_diffs, axes=1))
        if ratio is not None:
            R = R + ratio * np.eye(self.n)
        if signal_var is None:
            found = _factor(R, strict=False)
            if found is None:
                return lengthscales, self.floor, 0.0
            L, _ = found
            ones_solve = cho_solve((L, True), np.ones(self.n))
            beta = ones_solve @ self.y / np.sum(ones_solve)
            residual = self.y - beta
            signal_var = max(float(residual @ cho_solve((L, True), residual)) / self.n, self.floor)
        noise_var = ratio * signal_var if ratio is not None else self.noise_var
        return lengthscales, signal_var, noise_var

    def __call__(self, theta: np.ndarray) -> float:
        lengthscales, ratio, signal_var = self.unpack(theta)
        R = matern52(np.tensordot(1.0 / lengthscales ** 2, self.sq_diffs, axes=1))
        if ratio is not None:
            R = R + ratio * np.eye(self.n)
        elif signal_var is not None:
            R = R + (self.noise_var / signal_var) * np.eye(self.n)
        found = _factor(R, strict=False)
        if found is None:
            return math.inf
        L, _ = found
        factor = (L, True)
        ones_solve = cho_solve(factor, np.ones(self.n))
        beta = ones_solve @ self.y / np.sum(ones_solve)
        residual = self.y - beta
        quad = float(residual @ cho_solve(factor, residual))
        log_det = 2.0 * float(np.sum(np.log(np.diag(L))))
        if signal_var is None:
            signal_var = max(quad / self.n, self.floor)
            value = 0.5 * self.n * (math.log(signal_var) + 1.0) + 0.5 * log_det
        else:
            value = 0.5 * quad / signal_var + 0.5 * self.n * math.log(signal_var) + 0.5 * log_det
        return value + 0.5 * self.n * LOG_2PI


def fit_gp(inputs, outputs, noise_var: Union[float, str] = 0.0, rng: Optional[np.random.Generator] = None,
           n_starts: int = 10, max_fev: int = 400, threads: int = 1,
           warm_start: Optional[GpSurrogate] = None) -> GpSurrogate:
    """
    Fit a GP by maximum marginal likelihood

    Args:
        inputs: N x p design, N >= 2
        outputs: N observed values
        noise_var: Known observation noise variance, or "estimate"
        rng: Stream for the random starts
        n_starts: Number of Nelder-Mead starts; the first is the warm start or a default
        max_fev: Likelihood evaluations per start
        threads: Worker threads for the starts
        warm_start: Previous fit whose hyperparameters seed the first start

    Returns:
        GpSurrogate at the best likelihood found
    """
    X = np.atleast_2d(np.asarray(inputs, dtype=float))
    y = np.asarray(outputs, dtype=float).ravel()
    if X.shape[0] != y.size:
        raise ShapeError(f"{X.shape[0]} inputs for {y.size} outputs")
    if X.shape[0] < 2:
        raise ShapeError(f"a GP fit needs at least 2 observations, got {X.shape[0]}")
    if noise_var != ESTIMATE and float(noise_var) == 0.0:
        if np.unique(X, axis=0).shape[0] < X.shape[0]:
            raise DuplicateInputs("noiseless GP cannot interpolate repeated inputs")
    rng = rng if rng is not None else np.random.default_rng(0)

    objective = _Likelihood(X, y, noise_var)
    bounds = objective.bounds()
    lower = np.array([b[0] for b in bounds])
    upper = np.array([b[1] for b in bounds])

    first = objective.default_start()
    if warm_start is not None and warm_start.p == X.shape[1]:
        first[:objective.p] = np.log(warm_start.lengthscales)
    starts = [np.clip(first, lower, upper)]
    for _ in range(max(0, n_starts - 1)):
        start = first.copy()
        start[:objective.p] = np.log(objective.span * np.exp(rng.uniform(math.log(0.05), math.log(5.0), objective.p)))
        starts.append(np.clip(start, lower, upper))

    options = {"maxfev": max_fev, "xatol": 1e-4, "fatol": 1e-8}

    def run(start: np.ndarray):
        start_value = objective(start)
        result = minimize(objective, start, method="Nelder-Mead", bounds=bounds, options=options)
        if not np.isfinite(result.fun) or result.fun > start_value:
            return start_value, start
        return float(result.fun), result.x

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(start) for start in starts]

    # first strictly better wins so ties keep the lowest start index
    best_value, best_theta = results[0]
    for value, theta in results[1:]:
        if value < best_value:
            best_value, best_theta = value, theta
    if not np.isfinite(best_value):
        raise IllConditioned("no start produced a factorizable covariance")

    lengthscales, signal_var, fitted_noise = objective.hyperparameters(best_theta)
    model = condition_gp(X, y, lengthscales, signal_var, fitted_noise)
    logger.debug(f"GP fit on {model.n} points: log-likelihood {model.log_likelihood:.4f}, "
                 f"sigma^2 {signal_var:.4g}, tau^2 {fitted_noise:.3g}")
    return model
