"""
Expert-type domain - envelope constraints learned from historical curves
Bounds, incremental changes, maximum variation and maximum total variation, each with a tolerance
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from .curves import Curve, CurveSet, normalize
from .errors import BadWindow, ConfigError, DimensionMismatch, EmptySet

logger = logging.getLogger(__name__)

# Predicate over (historical n x d matrix, candidate d-vector)
Predicate = Callable[[np.ndarray, np.ndarray], bool]


# Configuration (1-based indices, as written in the constraint definitions) ---

@dataclass(frozen=True)
class BoundSpec:
    eps: float = 0.05
    indices: Optional[Tuple[int, ...]] = None  # None: every component


@dataclass(frozen=True)
class IncrementSpec:
    eps: float = 0.03
    steps: Optional[Tuple[int, ...]] = None  # j for the pair (j, j+1); None: every pair


@dataclass(frozen=True)
class WindowSpec:
    j1: int
    j2: int
    eps: float


@dataclass(frozen=True)
class GenericConstraint:
    """User-supplied constraint f(history, x) -> bool, true when x is acceptable"""

    name: str
    predicate: Predicate


@dataclass(frozen=True)
class ExpertConfig:
    bound: Optional[BoundSpec] = None
    increment: Optional[IncrementSpec] = None
    max_variation: Optional[WindowSpec] = None
    total_variation: Optional[WindowSpec] = None
    generic: Tuple[GenericConstraint, ...] = ()


def fuel_rod_preset(d: int) -> ExpertConfig:
    """
    Constraint list calibrated on burn-up profiles, end indices shifted to d

    Bounds on the first and last component (eps 0.05), increments j = 1, 2, d-2, d-1
    (eps 0.03), maximum variation (eps 0.03) and total variation (eps 0.1) on [3, d-2].
    """
    if d < 6:
        raise BadWindow(f"the fuel rod preset needs d >= 6, got {d}")
    return ExpertConfig(
        bound=BoundSpec(eps=0.05, indices=(1, d)),
        increment=IncrementSpec(eps=0.03, steps=(1, 2, d - 2, d - 1)),
        max_variation=WindowSpec(j1=3, j2=d - 2, eps=0.03),
        total_variation=WindowSpec(j1=3, j2=d - 2, eps=0.1),
    )


# Fitted constraints (0-based indices) ----------------------------------------

@dataclass(frozen=True)
class BoundConstraint:
    indices: np.ndarray
    eps: float
    lower: np.ndarray
    upper: np.ndarray
    name: str = "bound"

    def satisfied(self, X: np.ndarray) -> np.ndarray:
        values = X[:, self.indices]
        return np.all((values >= self.lower - self.eps) & (values <= self.upper + self.eps), axis=1)


@dataclass(frozen=True)
class IncrementConstraint:
    steps: np.ndarray
    eps: float
    lower: np.ndarray
    upper: np.ndarray
    name: str = "increment"

    def satisfied(self, X: np.ndarray) -> np.ndarray:
        increments = X[:, self.steps + 1] - X[:, self.steps]
        return np.all((increments >= self.lower - self.eps) & (increments <= self.upper + self.eps), axis=1)


@dataclass(frozen=True)
class VariationConstraint:
    """Cap on max |x_{j+1} - x_j| (kind "max") or sum of them (kind "total") over j1..j2"""

    kind: str
    j1: int
    j2: int
    eps: float
    cap: float

    @property
    def name(self) -> str:
        return f"{self.kind}_variation"

    def statistic(self, X: np.ndarray) -> np.ndarray:
        jumps = np.abs(np.diff(X, axis=1)[:, self.j1:self.j2 + 1])
        return jumps.max(axis=1) if self.kind == "max" else jumps.sum(axis=1)

    def satisfied(self, X: np.ndarray) -> np.ndarray:
        return self.statistic(X) <= self.cap + self.eps


class Membership(NamedTuple):
    inside: bool
    violations: Tuple[str, ...]


@dataclass(frozen=True)
class ExpertDomain:
    """Constraint-based estimate of the optimization domain"""

    d: int
    bound: Optional[BoundConstraint] = None
    increment: Optional[IncrementConstraint] = None
    max_variation: Optional[VariationConstraint] = None
    total_variation: Optional[VariationConstraint] = None
    generic: Tuple[GenericConstraint, ...] = ()
    history: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def active(self) -> List[Any]:
        return [c for c in (self.bound, self.increment, self.max_variation, self.total_variation)
                if c is not None]

    def to_dict(self) -> Dict[str, Any]:
        """JSON-ready envelopes and caps, indices back to 1-based"""
        out: Dict[str, Any] = {"type": "expert", "d": self.d}
        if self.bound is not None:
            out["bound"] = {"eps": self.bound.eps, "indices": [int(i) + 1 for i in self.bound.indices],
                            "lower": self.bound.lower.tolist(), "upper": self.bound.upper.tolist()}
        if self.increment is not None:
            out["increment"] = {"eps": self.increment.eps,
                                "steps": [int(j) + 1 for j in self.increment.steps],
                                "lower": self.increment.lower.tolist(),
                                "upper": self.increment.upper.tolist()}
        for constraint in (self.max_variation, self.total_variation):
            if constraint is not None:
                out[constraint.name] = {"eps": constraint.eps, "j1": constraint.j1 + 1,
                                        "j2": constraint.j2 + 1, "cap": constraint.cap}
        if self.generic:
            out["generic"] = [g.name for g in self.generic]
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExpertDomain":
        """Rebuild envelopes from to_dict output; generic predicates are not serializable"""
        bound = increment = max_variation = total_variation = None
        if "bound" in data:
            b = data["bound"]
            bound = BoundConstraint(np.asarray(b["indices"], dtype=int) - 1, float(b["eps"]),
                                    np.asarray(b["lower"], dtype=float), np.asarray(b["upper"], dtype=float))
        if "increment" in data:
            c = data["increment"]
            increment = IncrementConstraint(np.asarray(c["steps"], dtype=int) - 1, float(c["eps"]),
                                            np.asarray(c["lower"], dtype=float),
                                            np.asarray(c["upper"], dtype=float))
        if "max_variation" in data:
            v = data["max_variation"]
            max_variation = VariationConstraint("max", int(v["j1"]) - 1, int(v["j2"]) - 1,
                                                float(v["eps"]), float(v["cap"]))
        if "total_variation" in data:
            v = data["total_variation"]
            total_variation = VariationConstraint("total", int(v["j1"]) - 1, int(v["j2"]) - 1,
                                                  float(v["eps"]), float(v["cap"]))
        return cls(int(data["d"]), bound, increment, max_variation, total_variation)


def _check_eps(eps: float, what: str) -> float:
    eps = float(eps)
    if not np.isfinite(eps) or eps < 0:
        raise ConfigError(f"{what}: tolerance must be finite and >= 0, got {eps}")
    return eps


def _check_window(window: WindowSpec, d: int, what: str) -> Tuple[int, int]:
    if not 1 <= window.j1 < window.j2 <= d - 1:
        raise BadWindow(f"{what}: window [{window.j1}, {window.j2}] must satisfy 1 <= j1 < j2 <= {d - 1}")
    return window.j1 - 1, window.j2 - 1


def fit_expert_domain(curves: CurveSet, config: ExpertConfig) -> ExpertDomain:
    """
    Compute envelopes and caps as min/max over the historical set

    Args:
        curves: Historical curves, n >= 1
        config: Selected constraints with their tolerances and windows (1-based)

    Returns:
        ExpertDomain containing every historical curve
    """
    if curves is None or curves.n < 1:
        raise EmptySet("cannot fit an expert domain without historical curves")
    H = curves.matrix()
    d = curves.d
    bound = increment = max_variation = total_variation = None

    if config.bound is not None:
        if config.bound.indices is None:
            indices = np.arange(d)
        else:
            indices = np.asarray(config.bound.indices, dtype=int)
            if np.any(indices < 1) or np.any(indices > d):
                raise BadWindow(f"bound: indices must lie in [1, {d}]")
            indices = indices - 1
        values = H[:, indices]
        bound = BoundConstraint(indices, _check_eps(config.bound.eps, "bound"),
                                values.min(axis=0), values.max(axis=0))

    if config.increment is not None:
        if config.increment.steps is None:
            steps = np.arange(d - 1)
        else:
            steps = np.asarray(config.increment.steps, dtype=int)
            if np.any(steps < 1) or np.any(steps > d - 1):
                raise BadWindow(f"increment: steps must lie in [1, {d - 1}]")
            steps = steps - 1
        increments = H[:, steps + 1] - H[:, steps]
        increment = IncrementConstraint(steps, _check_eps(config.increment.eps, "increment"),
                                        increments.min(axis=0), increments.max(axis=0))

    for kind, window in (("max", config.max_variation), ("total", config.total_variation)):
        if window is None:
            continue
        j1, j2 = _check_window(window, d, f"{kind}_variation")
        probe = VariationConstraint(kind, j1, j2, _check_eps(window.eps, f"{kind}_variation"), 0.0)
        cap = float(probe.statistic(H).max())
        fitted = VariationConstraint(kind, j1, j2, probe.eps, cap)
        if kind == "max":
            max_variation = fitted
        else:
            total_variation = fitted

    domain = ExpertDomain(d, bound, increment, max_variation, total_variation,
                          tuple(config.generic), H)
    logger.info(f"Fitted expert domain on {curves.n} curves (d={d}): "
                f"{', '.join(c.name for c in domain.active) or 'no envelope constraints'}"
                f"{f' + {len(domain.generic)} generic' if domain.generic else ''}")
    return domain


def contains_many(domain: ExpertDomain, X: np.ndarray) -> np.ndarray:
    """Vectorized membership of the rows of an m x d array"""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != domain.d:
        raise DimensionMismatch(f"expected {domain.d} components, got {X.shape[1]}")
    inside = np.ones(X.shape[0], dtype=bool)
    for constraint in domain.active:
        inside &= constraint.satisfied(X)
    for generic in domain.generic:
        inside &= np.array([bool(generic.predicate(domain.history, row)) for row in X], dtype=bool)
    return inside


def contains(domain: ExpertDomain, curve: Curve) -> Membership:
    """
    Test a curve against every active constraint (closed inequalities)

    Returns:
        Membership with the names of the violated constraints
    """
    if curve.d != domain.d:
        raise DimensionMismatch(f"expected a curve on {domain.d} knots, got {curve.d}")
    X = curve.values[None, :]
    violations = [c.name for c in domain.active if not c.satisfied(X)[0]]
    violations += [g.name for g in domain.generic if not g.predicate(domain.history, curve.values)]
    return Membership(not violations, tuple(violations))


def sample_candidates(domain: ExpertDomain, curves: CurveSet, count: int, rng: np.random.Generator,
                      sd_scale: float = 0.25, max_rejections: int = 1000,
                      shrink_every: int = 10) -> List[Curve]:
    """
    Perturb, renormalize and reject around historical curves

    Each candidate starts from a random historical curve plus a zero-sum Gaussian
    perturbation with sd = sd_scale x mean envelope half-width. A candidate's sd is
    halved every shrink_every rejections; after max_rejections the unperturbed
    historical curve is returned.

    Args:
        domain: Fitted expert domain
        curves: The historical set the domain was fitted on
        count: Number of candidates, >= 1
        rng: Caller-owned random stream

    Returns:
        count curves, each inside the domain
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    H = curves.matrix()
    if H.shape[1] != domain.d:
        raise DimensionMismatch(f"expected curves on {domain.d} knots, got {H.shape[1]}")
    base_sd = sd_scale * float(np.mean((H.max(axis=0) - H.min(axis=0)) / 2.0))

    parents = rng.integers(H.shape[0], size=count)
    sd = np.full(count, base_sd)
    rejections = np.zeros(count, dtype=int)
    samples = np.empty((count, domain.d))
    pending = np.arange(count)
    fallbacks = 0

    while pending.size:
        noise = rng.standard_normal((pending.size, domain.d)) * sd[pending, None]
        noise -= noise.mean(axis=1, keepdims=True)
        X = H[parents[pending]] + noise
        ok = np.all(X >= 0, axis=1) & contains_many(domain, X)
        samples[pending[ok]] = X[ok]

        rejected = pending[~ok]
        rejections[rejected] += 1
        shrink = rejected[rejections[rejected] % shrink_every == 0]
        sd[shrink] /= 2.0
        exhausted = rejected[rejections[rejected] >= max_rejections]
        samples[exhausted] = H[parents[exhausted]]
        fallbacks += exhausted.size
        pending = rejected[rejections[rejected] < max_rejections]

    if fallbacks:
        logger.warning(f"Sampler fell back to {fallbacks} unperturbed historical curves")
    logger.debug(f"Sampled {count} candidates (mean rejections {rejections.mean():.1f})")
    return [normalize(row, curves.grid) for row in samples]
