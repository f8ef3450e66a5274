"""
Command-line front end - fit-domain, optimize and bench
Summaries go to stdout, diagnostics to stderr; exit codes follow the error families
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from dotenv import load_dotenv

from .acquisition import ExpertSpace, KdeSpace, SearchBudget
from .basis import SplineBasis, build_basis, projection_errors
from .config import RunConfig, apply_overrides, load_config
from .curves import CurveSet, load_curveset
from .density import KdeModel, fit_kde, load_model, save_model
from .errors import ConfigError, DataError, SimplexEgoError
from .evaluators import ExternalCommandObjective
from .expert_domain import (
    BoundSpec,
    ExpertConfig,
    ExpertDomain,
    IncrementSpec,
    WindowSpec,
    fit_expert_domain,
    fuel_rod_preset,
)
from .optimizer import EgoSettings, Objective, export_trace, run_ego
from .testbed import (
    AbcFamily,
    HOLDOUT_NOISE_SD,
    DistanceSineObjective,
    abc_sampler,
    brute_force_max,
    gen_abc_history,
    make_abc_anchor,
    make_distance_sine_scenario,
)

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ("method", "seed", "best_init", "best_final", "brute_ref")


@dataclass
class FittedDomain:
    kind: str
    space: Union[ExpertSpace, KdeSpace]
    expert: Optional[ExpertDomain] = None
    kde: Optional[KdeModel] = None
    basis: Optional[SplineBasis] = None


def _domain_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def load_history(config: RunConfig) -> CurveSet:
    """Historical curves from data.path, or a synthetic (a, b, c) family set"""
    if config.data.path is not None:
        try:
            return load_curveset(config.data.path)
        except OSError as e:
            raise DataError(f"cannot read history {config.data.path}: {e}") from None
    logger.info(f"Generating {config.data.n} synthetic family curves (seed {config.data.seed})")
    return gen_abc_history(config.data.n, config.data.seed)


def expert_config(config: RunConfig, d: int) -> ExpertConfig:
    """Preset constraint list with explicit sections taking precedence"""
    section = config.domain
    if section.preset == "fuel_rod":
        base = fuel_rod_preset(d)
    elif section.preset in (None, "none"):
        base = ExpertConfig()
    else:
        raise ConfigError(f"unknown expert preset '{section.preset}'")
    try:
        overrides = {}
        if section.bound is not None:
            spec = dict(section.bound)
            if spec.get("indices") is not None:
                spec["indices"] = tuple(spec["indices"])
            overrides["bound"] = BoundSpec(**spec)
        if section.increment is not None:
            spec = dict(section.increment)
            if spec.get("steps") is not None:
                spec["steps"] = tuple(spec["steps"])
            overrides["increment"] = IncrementSpec(**spec)
        if section.max_variation is not None:
            overrides["max_variation"] = WindowSpec(**section.max_variation)
        if section.total_variation is not None:
            overrides["total_variation"] = WindowSpec(**section.total_variation)
    except TypeError as e:
        raise ConfigError(f"domain constraint section: {e}") from None
    return replace(base, **overrides)


def fit_domain(config: RunConfig, history: CurveSet, kind: Optional[str] = None) -> FittedDomain:
    """Fit (or load from domain.artifact) the configured domain on the history"""
    kind = kind or config.domain.type
    artifact = config.domain.artifact if kind == config.domain.type else None
    if kind == "expert":
        if artifact is not None:
            try:
                domain = ExpertDomain.from_dict(json.loads(Path(artifact).read_text(encoding="utf-8")))
            except (OSError, ValueError, KeyError, TypeError) as e:
                raise DataError(f"cannot load expert domain {artifact}: {e}") from None
        else:
            domain = fit_expert_domain(history, expert_config(config, history.d))
        space = ExpertSpace(domain, history, sd_scale=config.domain.sd_scale)
        return FittedDomain("expert", space, expert=domain)

    if artifact is not None:
        model = load_model(artifact)
    else:
        basis = build_basis(config.basis.order, config.basis.knots)
        model = fit_kde(basis, history, delta=config.domain.delta, rng=_domain_rng(config.run.seed),
                        n_starts=config.domain.bandwidth_starts, threads=config.run.threads)
    space = KdeSpace(model, history.grid, nonnegative_alpha=config.domain.nonnegative_alpha)
    return FittedDomain("kde", space, kde=model, basis=model.basis)


def build_objective(config: RunConfig, history: CurveSet, method: str) -> Tuple[Objective, CurveSet]:
    """Objective named in the config and the history the run should use"""
    section = config.objective
    if section.name == "abc_general":
        if history.d != AbcFamily().d:
            raise ConfigError(f"abc_general needs curves on {AbcFamily().d} knots, got {history.d}")
        anchor = make_abc_anchor()
        noise = section.noise_sd or 0.0
        return Objective(DistanceSineObjective(anchor), noise, name="abc_general"), history
    if section.name == "distance_sine":
        basis = build_basis(config.basis.order, config.basis.knots) if method == "kde" else None
        noise = HOLDOUT_NOISE_SD if section.noise_sd is None else section.noise_sd
        scenario = make_distance_sine_scenario(history, method, section.holdout, basis, noise)
        return Objective(scenario.objective, scenario.noise_sd, name="distance_sine"), scenario.history
    evaluator = ExternalCommandObjective(section.command, timeout=section.timeout)
    return Objective(evaluator, section.noise_sd or 0.0, name="external"), history


def ego_settings(config: RunConfig, seed: Optional[int] = None) -> EgoSettings:
    return EgoSettings(
        n_init=config.run.n_init,
        n_iter=config.run.n_iter,
        seed=config.run.seed if seed is None else seed,
        maximize=config.run.maximize,
        min_ei=config.ei.min_ei,
        gp_noise=config.gp.noise,
        gp_starts=config.gp.starts,
        gp_max_fev=config.gp.max_fev,
        budget=SearchBudget(config.ei.n_candidates, config.ei.n_local_starts, config.ei.local_iters),
        threads=config.run.threads,
    )


def cmd_fit_domain(config: RunConfig) -> Dict[str, Any]:
    """Fit the domain, write its artifact and print a summary"""
    history = load_history(config)
    fitted = fit_domain(config, history)
    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)

    summary: Dict[str, Any] = {"type": fitted.kind, "n": history.n, "d": history.d}
    if fitted.kind == "expert":
        document = fitted.expert.to_dict()
        path = out_dir / "expert_domain.json"
        path.write_text(json.dumps(document, indent=2), encoding="utf-8")
        summary["constraints"] = {k: v for k, v in document.items() if k not in ("type", "d")}
    else:
        model = fitted.kde
        path = save_model(model, out_dir / "kde_model.json")
        errors = projection_errors(model.basis, history)
        summary.update(K=model.K, lambdas=model.lambdas.tolist(), threshold=model.threshold,
                       log_threshold=model.log_threshold, delta=model.delta,
                       worst_projection_mse=float(errors.max()))
    summary["artifact"] = str(path)
    print(json.dumps(summary, indent=2))
    return summary


def cmd_optimize(config: RunConfig) -> Dict[str, Path]:
    """Run EGO and write trace.csv, inputs.csv, cumbest.csv and report.json"""
    history = load_history(config)
    objective, run_history = build_objective(config, history, config.domain.type)
    fitted = fit_domain(config, run_history)
    trace, report = run_ego(objective, fitted.space, ego_settings(config))
    report.config = config.snapshot()
    paths = export_trace(trace, report, config.output.directory)
    print(json.dumps({"best_observed": report.best_observed, "best_init": report.best_init,
                      "best_iteration": report.best_iteration, "maximize": report.maximize,
                      "domain": report.domain, "evaluations": report.evaluations,
                      "outputs": {k: str(v) for k, v in paths.items()}}, indent=2))
    return paths


def _aggregate(rows: List[Dict[str, Any]], method: str) -> Dict[str, Any]:
    picked = [r for r in rows if r["method"] == method]
    init = np.array([r["best_init"] for r in picked])
    final = np.array([r["best_final"] for r in picked])
    return {"method": method, "runs": len(picked),
            "best_init_median": float(np.median(init)), "best_init_min": float(init.min()),
            "best_init_max": float(init.max()), "best_final_median": float(np.median(final)),
            "best_final_min": float(final.min()), "best_final_max": float(final.max()),
            "brute_ref": picked[0]["brute_ref"]}


def cmd_bench(config: RunConfig) -> List[Dict[str, Any]]:
    """Both domain methods across bench.seeds run seeds on one history, plus the brute-force reference"""
    bench = config.bench
    history = gen_abc_history(bench.history_n, bench.data_seed)
    base = replace(config, run=replace(config.run, seed=bench.data_seed))

    if bench.scenario == "abc_general":
        anchor_objective = DistanceSineObjective(make_abc_anchor())
        brute_ref, _ = brute_force_max(anchor_objective.values, abc_sampler(), bench.brute_force,
                                       np.random.default_rng(bench.data_seed))
    else:
        brute_ref = 0.0

    rows: List[Dict[str, Any]] = []
    for method in bench.methods:
        if bench.scenario == "abc_general":
            objective = Objective(DistanceSineObjective(make_abc_anchor()), 0.0, name="abc_general")
            run_history = history
            settings = ego_settings(base)
        else:
            basis = build_basis(config.basis.order, config.basis.knots) if method == "kde" else None
            scenario = make_distance_sine_scenario(history, method, config.objective.holdout, basis)
            objective = Objective(scenario.objective, scenario.noise_sd, name=scenario.name)
            run_history = scenario.history
            settings = replace(ego_settings(base), n_init=scenario.n_init, n_iter=scenario.n_iter)
        fitted = fit_domain(base, run_history, kind=method)
        for seed in range(bench.seeds):
            _, report = run_ego(objective, fitted.space, replace(settings, seed=seed))
            rows.append({"method": method, "seed": seed, "best_init": report.best_init,
                         "best_final": report.best_observed, "brute_ref": brute_ref})
            logger.info(f"bench {method} seed {seed}: init {report.best_init:.4f} → final {report.best_observed:.4f}")

    out_dir = Path(config.output.directory)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "bench.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)
    summary = [_aggregate(rows, method) for method in bench.methods]
    with open(out_dir / "bench_summary.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(summary[0]))
        writer.writeheader()
        writer.writerows(summary)

    print(",".join(BENCH_COLUMNS))
    for row in rows:
        print(f"{row['method']},{row['seed']},{row['best_init']:.6f},{row['best_final']:.6f},{row['brute_ref']:.6f}")
    for entry in summary:
        print(f"# {entry['method']}: median init {entry['best_init_median']:.4f}, "
              f"median final {entry['best_final_median']:.4f}, brute {entry['brute_ref']:.4f}")
    return rows


COMMANDS = {"fit-domain": cmd_fit_domain, "optimize": cmd_optimize, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simplex-ego",
                                     description="EGO over empirically estimated mean-one curve domains")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="YAML or JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Override run.seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="Worker threads for multistarts (default: SIMPLEX_EGO_THREADS or 1)")
    parser.add_argument("--maximize", dest="maximize", action="store_const", const=True, default=None,
                        help="Maximize the objective")
    parser.add_argument("--minimize", dest="maximize", action="store_const", const=False,
                        help="Minimize the objective")
    parser.add_argument("--min-ei", type=float, default=None, help="Stop when the best EI falls below this")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point with environment configuration"""
    load_dotenv()
    log_level = os.getenv("LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, log_level, logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        config = apply_overrides(config, seed=args.seed, threads=args.threads,
                                 maximize=args.maximize, min_ei=args.min_ei)
        if args.seed is None and config.run.seed == 0:
            logger.info("Seed not set; using seed 0")
        COMMANDS[args.command](config)
    except SimplexEgoError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        logger.error(f"{type(e).__name__}: {e}")
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
