"""
EGO loop - space-filling initial design, GP refit, EI step, evaluation
Runner state, trace records, run report and trace export
"""
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from sklearn.cluster import KMeans

from .acquisition import AcquisitionProblem, ExpertSpace, KdeSpace, PluginRule, SearchBudget, maximize_ei
from .curves import Curve
from .errors import CountExceedsData, ObjectiveError, ShapeError
from .surrogate import ESTIMATE, GpSurrogate, fit_gp, predict_many

TRACE_COLUMNS = ("iter", "y", "yhat", "ei", "plugin", "cumbest")


class RunPhase(Enum):
    """Runner phases"""
    IDLE = "idle"
    INIT_DESIGN = "init_design"
    FITTING = "fitting"
    ACQUIRING = "acquiring"
    EVALUATING = "evaluating"
    DONE = "done"


@dataclass
class Objective:
    """Evaluator on curves with its observation noise and evaluation budget"""

    evaluator: Callable[[Curve], float]
    noise_sd: float = 0.0
    eval_budget: Optional[int] = None
    name: str = "objective"

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError(f"noise_sd must be >= 0, got {self.noise_sd}")
        if self.eval_budget is not None and self.eval_budget < 1:
            raise ValueError(f"eval_budget must be >= 1, got {self.eval_budget}")


@dataclass(frozen=True)
class EgoSettings:
    n_init: int = 30
    n_iter: int = 30
    seed: int = 0
    maximize: bool = True
    min_ei: Optional[float] = None
    gp_noise: Union[None, float, str] = None  # None: tau^2 of the objective, fixed
    gp_starts: int = 10
    gp_max_fev: int = 400
    budget: SearchBudget = field(default_factory=SearchBudget)
    threads: int = 1


@dataclass
class TraceRecord:
    iteration: int
    phase: str
    y: float
    yhat: float
    ei: float
    plugin: float
    cumbest: float
    coords: np.ndarray
    curve: np.ndarray
    native: np.ndarray
    seconds: float


@dataclass
class EgoTrace:
    records: List[TraceRecord] = field(default_factory=list)
    init_indices: List[int] = field(default_factory=list)
    seeds: Dict[str, Any] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def cumbest_table(self) -> np.ndarray:
        """(iteration, cumulative best): iteration 0 is the initial design, then one row per EI step"""
        n_init = sum(1 for r in self.records if r.phase == "init")
        cum = self.column("cumbest")
        return np.column_stack([np.arange(len(cum) - n_init + 1), cum[n_init - 1:]])


@dataclass
class RunReport:
    best_input: List[float]
    best_observed: float
    best_iteration: int
    best_init: float
    maximize: bool
    domain: str
    n_init: int
    n_iter: int
    evaluations: int
    stopped_early: bool
    recommended_input: Optional[List[float]] = None
    recommended_yhat: Optional[float] = None
    surrogate: Optional[Dict[str, Any]] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def init_design(points, count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Indices of the historical points nearest to k-means barycenters

    Args:
        points: n x p historical representations
        count: Number of design points, <= n
        rng: Stream seeding the clustering

    Returns:
        count distinct indices in barycenter order; an index whose row repeats the
        values of an earlier pick is taken only once every distinct row is used
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if count > n:
        raise CountExceedsData(f"requested {count} design points from {n} historical curves")
    _, groups = np.unique(points, axis=0, return_inverse=True)
    groups = np.ravel(groups)
    if count == n:
        first = np.zeros(n, dtype=bool)
        first[np.unique(groups, return_index=True)[1]] = True
        return np.argsort(~first, kind="stable")

    kmeans = KMeans(n_clusters=count, init="k-means++", n_init=5, max_iter=50,
                    random_state=int(rng.integers(2 ** 31 - 1)))
    kmeans.fit(points)
    centers = kmeans.cluster_centers_

    used = np.zeros(n, dtype=bool)
    taken = np.zeros(int(groups.max()) + 1, dtype=bool)
    selected = []
    for center in centers:
        order = np.argsort(np.sum((points - center) ** 2, axis=1), kind="stable")
        order = order[~used[order]]
        fresh = order[~taken[groups[order]]]
        i = int(fresh[0] if fresh.size else order[0])
        used[i] = True
        taken[groups[i]] = True
        selected.append(i)
    return np.array(selected, dtype=int)


class EgoRunner:
    """
    Sequential EGO over an estimated curve domain
    Flow: initial design → (fit GP → maximize EI → evaluate) × n_iter → report
    """

    def __init__(self, objective: Objective, space: Union[ExpertSpace, KdeSpace],
                 settings: EgoSettings = EgoSettings()):
        self.objective = objective
        self.space = space
        self.settings = settings
        self.logger = logging.getLogger(__name__)

        self.phase = RunPhase.IDLE
        self.trace = EgoTrace()
        self.surrogate: Optional[GpSurrogate] = None
        self.stopped_early = False

        streams = np.random.SeedSequence(settings.seed).spawn(4)
        self.init_rng, self.gp_rng, self.acq_rng, self.noise_rng = (np.random.default_rng(s) for s in streams)
        self.trace.seeds = {"seed": settings.seed, "streams": ["init", "gp", "acquisition", "noise"]}

        self._inputs: List[np.ndarray] = []
        self._observed: List[float] = []
        self.gp_fits = 0
        self.eval_seconds = 0.0

    @property
    def domain_type(self) -> str:
        return "kde" if isinstance(self.space, KdeSpace) else "expert"

    @property
    def sign(self) -> float:
        """Factor taking observations to the internal minimization scale"""
        return -1.0 if self.settings.maximize else 1.0

    def _set_phase(self, phase: RunPhase):
        self.phase = phase
        self.logger.debug(f"Phase → {phase.value}")

    def _gp_noise(self) -> Union[float, str]:
        if self.settings.gp_noise is None:
            return self.objective.noise_sd ** 2
        return self.settings.gp_noise

    def _evaluate(self, curve: Curve, iteration: int) -> float:
        """Objective value at the curve, with the harness noise added"""
        start = time.perf_counter()
        try:
            value = float(self.objective.evaluator(curve))
        except ObjectiveError as e:
            if e.iteration is not None:
                raise
            raise ObjectiveError(str(e), iteration) from e
        except Exception as e:
            raise ObjectiveError(f"{type(e).__name__}: {e}", iteration) from e
        if not math.isfinite(value):
            raise ObjectiveError(f"objective returned {value}", iteration)
        if self.objective.noise_sd > 0:
            value += float(self.noise_rng.normal(0.0, self.objective.noise_sd))
        self.eval_seconds += time.perf_counter() - start
        return value

    def _record(self, phase: str, coords, curve: Curve, native, y: float,
                yhat=math.nan, ei=math.nan, plugin=math.nan, seconds=0.0):
        best = max if self.settings.maximize else min
        cumbest = y if not self.trace.records else best(self.trace.records[-1].cumbest, y)
        self.trace.records.append(TraceRecord(
            iteration=len(self.trace.records) + 1, phase=phase, y=y, yhat=yhat, ei=ei,
            plugin=plugin, cumbest=cumbest, coords=np.asarray(coords, dtype=float).copy(),
            curve=curve.values.copy(), native=np.asarray(native, dtype=float).copy(), seconds=seconds))
        self._inputs.append(np.asarray(coords, dtype=float))
        self._observed.append(y)

    def _run_init(self):
        self._set_phase(RunPhase.INIT_DESIGN)
        skeleton = self.space.skeleton()
        n_init = self.settings.n_init
        noise = self._gp_noise()
        if noise != ESTIMATE and float(noise) == 0.0:
            # a noiseless GP cannot take the same input twice
            distinct = int(np.unique(skeleton, axis=0).shape[0])
            if n_init > distinct:
                self.logger.warning(f"Only {distinct} distinct historical curves, initial design cut "
                                    f"from {n_init} to {distinct} points")
                n_init = distinct
        indices = init_design(skeleton, n_init, self.init_rng)
        self.trace.init_indices = indices.tolist()
        for i in indices:
            curve = self.space.history_curve(int(i))
            start = time.perf_counter()
            y = self.space.known_output(int(i))
            if y is None:
                y = self._evaluate(curve, len(self.trace.records) + 1)
            self._record("init", skeleton[i], curve, self.space.history_native(int(i)), y,
                         seconds=time.perf_counter() - start)
        self.logger.info(f"✅ Initial design: {len(indices)} points, best y = {self.trace.records[-1].cumbest:.6g}")

    def _fit(self) -> GpSurrogate:
        self._set_phase(RunPhase.FITTING)
        X = np.vstack(self._inputs)
        y = self.sign * np.asarray(self._observed)
        model = fit_gp(X, y, noise_var=self._gp_noise(), rng=self.gp_rng,
                       n_starts=self.settings.gp_starts, max_fev=self.settings.gp_max_fev,
                       threads=self.settings.threads, warm_start=self.surrogate)
        self.gp_fits += 1
        self.surrogate = model
        return model

    def _iterate(self, step: int) -> bool:
        """One EI step; False when the EI stop threshold is hit"""
        model = self._fit()

        self._set_phase(RunPhase.ACQUIRING)
        rule = PluginRule.for_noise(self.objective.noise_sd)
        problem = AcquisitionProblem(model, self.space, self.settings.budget, self.acq_rng)
        acq = maximize_ei(problem, rule)
        if self.settings.min_ei is not None and acq.ei < self.settings.min_ei:
            self.logger.info(f"EI {acq.ei:.3g} below min_ei {self.settings.min_ei:g}, stopping after {step - 1} steps")
            return False

        self._set_phase(RunPhase.EVALUATING)
        start = time.perf_counter()
        y = self._evaluate(acq.curve, len(self.trace.records) + 1)
        self._record("ei", acq.coords, acq.curve, acq.native, y, yhat=self.sign * acq.yhat,
                     ei=acq.ei, plugin=self.sign * acq.plugin, seconds=time.perf_counter() - start)
        self.logger.info(f"Iteration {step}/{self.settings.n_iter}: y = {y:.6g}, EI = {acq.ei:.3g}, "
                         f"best = {self.trace.records[-1].cumbest:.6g}")
        return True

    def run(self) -> Tuple[EgoTrace, RunReport]:
        settings = self.settings
        budget = self.objective.eval_budget
        if budget is not None and settings.n_init + settings.n_iter > budget:
            raise ShapeError(f"{settings.n_init} + {settings.n_iter} evaluations exceed the budget of {budget}")
        self.logger.info(f"🚀 EGO run: {self.domain_type} domain, {settings.n_init} initial + {settings.n_iter} "
                         f"EI steps, seed {settings.seed}, {'maximizing' if settings.maximize else 'minimizing'}")

        self._run_init()
        for step in range(1, settings.n_iter + 1):
            if not self._iterate(step):
                self.stopped_early = True
                break

        report = self._report()
        self.shutdown()
        return self.trace, report

    def _report(self) -> RunReport:
        y = np.asarray(self._observed)
        best = int(np.argmax(y) if self.settings.maximize else np.argmin(y))
        n_init = len(self.trace.init_indices)
        init_y = y[:n_init]
        report = RunReport(
            best_input=self.trace.records[best].curve.tolist(),
            best_observed=float(y[best]),
            best_iteration=best + 1,
            best_init=float(init_y.max() if self.settings.maximize else init_y.min()),
            maximize=self.settings.maximize,
            domain=self.domain_type,
            n_init=n_init,
            n_iter=len(self.trace) - n_init,
            evaluations=len(self.trace),
            stopped_early=self.stopped_early,
            config=_settings_snapshot(self.settings, self.objective),
        )
        if self.objective.noise_sd > 0:
            model = self._fit()
            yhat, _ = predict_many(model, np.vstack(self._inputs))
            pick = int(np.argmin(yhat))
            report.recommended_input = self.trace.records[pick].curve.tolist()
            report.recommended_yhat = float(self.sign * yhat[pick])
        if self.surrogate is not None:
            report.surrogate = self.surrogate.summary()
        return report

    def shutdown(self):
        self._set_phase(RunPhase.DONE)
        self.logger.info("🛑 EGO run finished")
        self.logger.info("   Session Stats:")
        self.logger.info(f"   - Evaluations: {len(self.trace)}")
        self.logger.info(f"   - GP fits: {self.gp_fits}")
        self.logger.info(f"   - Objective time: {self.eval_seconds:.2f}s")
        self.logger.info(f"   - Best y: {self.trace.records[-1].cumbest:.6g}")

    def get_status(self) -> dict:
        return {
            "phase": self.phase.value,
            "domain": self.domain_type,
            "evaluations": len(self.trace),
            "gp_fits": self.gp_fits,
            "best": self.trace.records[-1].cumbest if self.trace.records else None,
        }


def _settings_snapshot(settings: EgoSettings, objective: Objective) -> Dict[str, Any]:
    snapshot = asdict(settings)
    snapshot["objective"] = {"name": objective.name, "noise_sd": objective.noise_sd}
    return snapshot


def run_ego(objective: Objective, space: Union[ExpertSpace, KdeSpace], settings: EgoSettings = EgoSettings()):
    """
    Run EGO to completion

    Returns:
        (EgoTrace, RunReport) with observations on the caller's orientation
    """
    return EgoRunner(objective, space, settings).run()


def export_trace(trace: EgoTrace, report: RunReport, directory: Union[str, Path]) -> Dict[str, Path]:
    """Write trace.csv, inputs.csv, cumbest.csv and report.json into directory"""
    if not trace.records:
        raise ShapeError("cannot export an empty trace")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {name: directory / name for name in ("trace.csv", "inputs.csv", "cumbest.csv", "report.json")}

    with open(paths["trace.csv"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(TRACE_COLUMNS)
        for r in trace.records:
            writer.writerow([r.iteration] + [repr(float(v)) for v in (r.y, r.yhat, r.ei, r.plugin, r.cumbest)])

    with open(paths["inputs.csv"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter"] + [f"x{j + 1}" for j in range(trace.records[0].curve.size)])
        for r in trace.records:
            writer.writerow([r.iteration] + [repr(float(v)) for v in r.curve])

    with open(paths["cumbest.csv"], "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iter", "cumbest"])
        for it, value in trace.cumbest_table():
            writer.writerow([int(it), repr(float(value))])

    document = report.to_dict()
    document["seeds"] = trace.seeds
    document["init_indices"] = trace.init_indices
    paths["report.json"].write_text(json.dumps(document, indent=2), encoding="utf-8")
    return paths


def load_trace(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Columns of a trace.csv keyed by header name"""
    with open(path, newline="", encoding="utf-8") as handle:
        rows = list(csv.reader(handle))
    header, body = rows[0], [row for row in rows[1:] if row]
    if tuple(header) != TRACE_COLUMNS:
        raise ShapeError(f"{path}: unexpected trace columns {header}")
    table = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(-1, len(header))
    return {name: table[:, j] for j, name in enumerate(header)}
