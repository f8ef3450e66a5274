"""
Expected improvement - closed form, plugin rules and constrained maximization
Search spaces adapt the expert and KDE domains to one candidate/local-search routine
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple, Optional, Union

import numpy as np
from scipy.stats import norm

from .basis import synthesize
from .curves import Curve, CurveSet, normalize
from .density import KdeModel, admissible_many
from .errors import DimensionMismatch, NoFeasibleCandidate
from .expert_domain import ExpertDomain, contains_many, sample_candidates
from .simplex import HyperplaneMap
from .surrogate import GpSurrogate, predict_many

logger = logging.getLogger(__name__)


class PluginMode(Enum):
    DETERMINISTIC_MIN = "deterministic_min"
    NOISY_PENALIZED = "noisy_penalized"


@dataclass(frozen=True)
class PluginRule:
    """How the incumbent value y_min is approximated"""

    mode: PluginMode = PluginMode.DETERMINISTIC_MIN
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "mode", PluginMode(self.mode))
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.mode is PluginMode.DETERMINISTIC_MIN and self.tau != 0:
            raise ValueError("deterministic_min plugin takes tau = 0")

    @classmethod
    def for_noise(cls, tau: float) -> "PluginRule":
        if tau > 0:
            return cls(PluginMode.NOISY_PENALIZED, tau)
        return cls()


@dataclass(frozen=True)
class SearchBudget:
    n_candidates: int = 2048
    n_local_starts: int = 8
    local_iters: int = 64

    def __post_init__(self):
        if min(self.n_candidates, self.n_local_starts, self.local_iters) < 1:
            raise ValueError(f"search budgets must be >= 1, got {self}")


def expected_improvement(y_plugin, yhat, s):
    """
    (y_plugin - yhat) Phi(u) + s phi(u), u = (y_plugin - yhat) / s; max(y_plugin - yhat, 0) at s = 0

    Broadcasts over arrays; scalars in, float out.
    """
    gap = np.asarray(y_plugin, dtype=float) - np.asarray(yhat, dtype=float)
    s = np.asarray(s, dtype=float)
    gap, s = np.broadcast_arrays(gap, s)
    positive = s > 0
    safe_s = np.where(positive, s, 1.0)
    u = gap / safe_s
    ei = np.where(positive, gap * norm.cdf(u) + safe_s * norm.pdf(u), np.maximum(gap, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def plugin_value(rule: PluginRule, surrogate: GpSurrogate, training_inputs=None) -> float:
    """Incumbent on the minimization scale: min y_i, or min yhat(x_i) - 2 tau"""
    if rule.mode is PluginMode.DETERMINISTIC_MIN:
        return float(np.min(surrogate.outputs))
    inputs = surrogate.inputs if training_inputs is None else training_inputs
    yhat, _ = predict_many(surrogate, inputs)
    return float(np.min(yhat) - 2.0 * rule.tau)


class ExpertSpace:
    """Expert domain seen through the hyperplane coordinates"""

    def __init__(self, domain: ExpertDomain, curves: CurveSet, sd_scale: float = 0.25,
                 use_history_outputs: bool = True):
        if domain.d != curves.d:
            raise DimensionMismatch(f"domain on {domain.d} knots, curves on {curves.d}")
        self.domain = domain
        self.curves = curves
        self.sd_scale = sd_scale
        self.use_history_outputs = use_history_outputs
        self.hmap = HyperplaneMap(curves.d)
        self.history = self.hmap.forward(curves.matrix())
        spread = self.history.std(axis=0)
        self.step = np.where(spread > 0, spread, 1e-3)

    @property
    def p(self) -> int:
        return self.hmap.p

    def skeleton(self) -> np.ndarray:
        return self.history

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        sampled = sample_candidates(self.domain, self.curves, count, rng, sd_scale=self.sd_scale)
        return self.hmap.forward(np.vstack([c.values for c in sampled]))

    def feasible(self, Z: np.ndarray) -> np.ndarray:
        X = self.hmap.backward(Z)
        return np.all(X >= 0, axis=1) & contains_many(self.domain, X)

    def to_curve(self, z: np.ndarray) -> Curve:
        return normalize(self.hmap.backward(z), self.curves.grid)

    def native(self, z: np.ndarray) -> np.ndarray:
        return self.to_curve(z).values

    def history_curve(self, i: int) -> Curve:
        return self.curves.curves[i]

    def history_native(self, i: int) -> np.ndarray:
        return self.curves.curves[i].values

    def known_output(self, i: int) -> Optional[float]:
        """Recorded output of historical curve i, used instead of a fresh evaluation"""
        if self.curves.outputs is None or not self.use_history_outputs:
            return None
        return float(self.curves.outputs[i])


class KdeSpace:
    """KDE-admissible coefficient vectors, optionally restricted to alpha >= 0"""

    def __init__(self, model: KdeModel, grid, nonnegative_alpha: bool = True):
        self.model = model
        self.grid = grid
        self.nonnegative_alpha = nonnegative_alpha
        self._grid_basis = model.basis.evaluate(grid.knots)
        self.step = np.asarray(model.lambdas, dtype=float)

    @property
    def p(self) -> int:
        return self.model.K

    def skeleton(self) -> np.ndarray:
        return np.asarray(self.model.alphas)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        parents = rng.integers(self.model.n, size=count)
        noise = rng.standard_normal((count, self.model.K)) * self.model.lambdas
        return self.model.alphas[parents] + noise

    def feasible(self, A: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(A)
        ok = np.all(np.isfinite(A), axis=1)
        if self.nonnegative_alpha:
            ok &= np.all(A >= 0, axis=1)
        ok &= np.maximum(A @ self._grid_basis.T, 0.0).mean(axis=1) > 0
        ok[ok] = admissible_many(self.model, A[ok])
        return ok

    def to_curve(self, alpha: np.ndarray) -> Curve:
        return synthesize(self.model.basis, alpha, self.grid)

    def native(self, alpha: np.ndarray) -> np.ndarray:
        return np.asarray(alpha, dtype=float)

    def history_curve(self, i: int) -> Curve:
        return self.to_curve(self.model.alphas[i])

    def history_native(self, i: int) -> np.ndarray:
        return np.asarray(self.model.alphas[i])

    def known_output(self, i: int) -> Optional[float]:
        return None


SearchSpace = Union[ExpertSpace, KdeSpace]


@dataclass
class AcquisitionProblem:
    surrogate: GpSurrogate
    space: SearchSpace
    budget: SearchBudget = field(default_factory=SearchBudget)
    rng: Optional[np.random.Generator] = None


class Acquisition(NamedTuple):
    coords: np.ndarray
    curve: Curve
    native: np.ndarray
    ei: float
    yhat: float
    s: float
    plugin: float
    candidates_scored: int


def _drop_evaluated(Z: np.ndarray, inputs: np.ndarray) -> np.ndarray:
    """Mask of rows of Z that do not coincide with an evaluated input"""
    scale = max(1.0, float(np.max(np.abs(inputs))))
    sq = np.sum((Z[:, None, :] - inputs[None, :, :]) ** 2, axis=2)
    return np.min(sq, axis=1) > (1e-10 * scale) ** 2


def maximize_ei(problem: AcquisitionProblem, rule: PluginRule) -> Acquisition:
    """
    Next input: the feasible point with the highest EI found

    Candidates from the space's sampler are scored, then the best n_local_starts
    are refined by per-coordinate random steps, a step being halved whenever the
    move is infeasible or does not raise EI. Candidates equal to an evaluated input
    are discarded; ties go to the earliest candidate.
    """
    model, space, budget = problem.surrogate, problem.space, problem.budget
    rng = problem.rng if problem.rng is not None else np.random.default_rng(0)
    if space.p != model.p:
        raise DimensionMismatch(f"search space has {space.p} coordinates, surrogate {model.p}")
    y_plugin = plugin_value(rule, model)

    Z = space.sample(budget.n_candidates, rng)
    Z = Z[space.feasible(Z) & _drop_evaluated(Z, model.inputs)]
    if Z.shape[0] == 0:
        skeleton = space.skeleton()
        Z = skeleton[space.feasible(skeleton) & _drop_evaluated(skeleton, model.inputs)]
        logger.warning(f"No sampled candidate survived; falling back to {Z.shape[0]} historical points")
        if Z.shape[0] == 0:
            raise NoFeasibleCandidate("no unevaluated feasible point, not even in the historical skeleton")
    scored = Z.shape[0]

    yhat, s = predict_many(model, Z)
    ei = expected_improvement(y_plugin, yhat, s)

    order = np.argsort(-ei, kind="stable")[:budget.n_local_starts]
    current = Z[order].copy()
    current_ei = ei[order].copy()
    step = np.tile(space.step, (current.shape[0], 1))
    rows = np.arange(current.shape[0])
    for _ in range(budget.local_iters):
        j = rng.integers(space.p, size=rows.size)
        proposal = current.copy()
        proposal[rows, j] += step[rows, j] * rng.standard_normal(rows.size)
        ok = space.feasible(proposal) & _drop_evaluated(proposal, model.inputs)
        p_yhat, p_s = predict_many(model, proposal)
        p_ei = expected_improvement(y_plugin, p_yhat, p_s)
        better = ok & (p_ei > current_ei)
        current[better] = proposal[better]
        current_ei[better] = p_ei[better]
        step[rows[~better], j[~better]] /= 2.0

    # local starts are ordered by initial EI, so the stable argmax keeps ties early
    best = int(np.argmax(current_ei))
    z = current[best]
    b_yhat, b_s = predict_many(model, z[None, :])
    logger.debug(f"EI maximized over {scored} candidates: EI {current_ei[best]:.4g} "
                 f"(best raw {ei[order[0]]:.4g}), plugin {y_plugin:.6g}")
    return Acquisition(z, space.to_curve(z), space.native(z), float(current_ei[best]),
                       float(b_yhat[0]), float(b_s[0]), y_plugin, scored)
