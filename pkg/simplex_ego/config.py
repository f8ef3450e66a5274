"""
Run configuration - YAML (or JSON) file parsed into frozen section dataclasses
Unknown sections and keys are rejected; paths resolve against the file's directory
"""
import json
import logging
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .basis import DEFAULT_KNOTS, DEFAULT_ORDER
from .density import DEFAULT_DELTA
from .errors import ConfigError

logger = logging.getLogger(__name__)

THREADS_ENV = "SIMPLEX_EGO_THREADS"


@dataclass(frozen=True)
class DataSection:
    path: Optional[str] = None
    generate: Optional[str] = None  # "abc": synthetic (a, b, c) family history
    n: int = 1000
    seed: int = 0


@dataclass(frozen=True)
class DomainSection:
    type: str = "kde"
    preset: Optional[str] = "fuel_rod"
    bound: Optional[Dict[str, Any]] = None
    increment: Optional[Dict[str, Any]] = None
    max_variation: Optional[Dict[str, Any]] = None
    total_variation: Optional[Dict[str, Any]] = None
    delta: float = DEFAULT_DELTA
    nonnegative_alpha: bool = True
    sd_scale: float = 0.25
    bandwidth_starts: int = 5
    artifact: Optional[str] = None


@dataclass(frozen=True)
class BasisSection:
    order: int = DEFAULT_ORDER
    knots: Tuple[float, ...] = DEFAULT_KNOTS


@dataclass(frozen=True)
class GpSection:
    noise: Union[None, float, str] = None
    starts: int = 10
    max_fev: int = 400


@dataclass(frozen=True)
class EiSection:
    n_candidates: int = 2048
    n_local_starts: int = 8
    local_iters: int = 64
    min_ei: Optional[float] = None


@dataclass(frozen=True)
class RunSection:
    n_init: int = 30
    n_iter: int = 30
    seed: int = 0
    maximize: bool = True
    threads: int = 1


@dataclass(frozen=True)
class ObjectiveSection:
    name: str = "abc_general"
    noise_sd: Optional[float] = None
    holdout: int = 0
    command: Optional[Union[str, List[str]]] = None
    timeout: float = 600.0


@dataclass(frozen=True)
class BenchSection:
    scenario: str = "abc_general"
    seeds: int = 10
    methods: Tuple[str, ...] = ("kde", "expert")
    history_n: int = 1000
    data_seed: int = 0
    brute_force: int = 1_000_000


@dataclass(frozen=True)
class OutputSection:
    directory: str = "results"


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    domain: DomainSection = field(default_factory=DomainSection)
    basis: BasisSection = field(default_factory=BasisSection)
    gp: GpSection = field(default_factory=GpSection)
    ei: EiSection = field(default_factory=EiSection)
    run: RunSection = field(default_factory=RunSection)
    objective: ObjectiveSection = field(default_factory=ObjectiveSection)
    bench: BenchSection = field(default_factory=BenchSection)
    output: OutputSection = field(default_factory=OutputSection)
    source: Optional[str] = None

    def snapshot(self) -> Dict[str, Any]:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self) if f.name != "source"}


SECTIONS = {f.name: f.default_factory for f in fields(RunConfig) if f.name != "source"}
DOMAIN_TYPES = ("kde", "expert")
OBJECTIVES = ("abc_general", "distance_sine", "external")


def _plain(section) -> Dict[str, Any]:
    out = {}
    for f in fields(section):
        value = getattr(section, f.name)
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def _build_section(name: str, raw: Any):
    cls = SECTIONS[name]
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in section '{name}': {', '.join(unknown)}")
    values = {}
    for key, value in raw.items():
        if isinstance(known[key].default, tuple) and isinstance(value, list):
            value = tuple(value)
        values[key] = value
    return cls(**values)


def _resolve(path: Optional[str], base: Path) -> Optional[str]:
    if path is None:
        return None
    candidate = Path(path).expanduser()
    return str(candidate if candidate.is_absolute() else (base / candidate).resolve())


def _validate(config: RunConfig):
    if config.domain.type not in DOMAIN_TYPES:
        raise ConfigError(f"domain.type must be one of {DOMAIN_TYPES}, got '{config.domain.type}'")
    if config.objective.name not in OBJECTIVES:
        raise ConfigError(f"objective.name must be one of {OBJECTIVES}, got '{config.objective.name}'")
    if config.objective.name == "external" and not config.objective.command:
        raise ConfigError("objective 'external' needs a command")
    if config.data.path is None and config.data.generate not in (None, "abc"):
        raise ConfigError(f"data.generate supports 'abc' only, got '{config.data.generate}'")
    if config.run.n_init < 1 or config.run.n_iter < 0:
        raise ConfigError("run.n_init must be >= 1 and run.n_iter >= 0")
    if config.run.threads < 1:
        raise ConfigError("run.threads must be >= 1")
    if config.domain.delta <= 0:
        raise ConfigError("domain.delta must be > 0")
    if isinstance(config.gp.noise, str) and config.gp.noise != "estimate":
        raise ConfigError(f"gp.noise must be a number or 'estimate', got '{config.gp.noise}'")
    if config.bench.scenario not in ("abc_general", "distance_sine"):
        raise ConfigError(f"bench.scenario must be abc_general or distance_sine, got '{config.bench.scenario}'")
    for method in config.bench.methods:
        if method not in DOMAIN_TYPES:
            raise ConfigError(f"bench.methods entries must be in {DOMAIN_TYPES}, got '{method}'")


def config_from_dict(raw: Optional[Dict[str, Any]], base: Union[str, Path] = ".",
                     source: Optional[str] = None) -> RunConfig:
    """Build and validate a RunConfig from decoded sections"""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping of sections")
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    try:
        sections = {name: _build_section(name, raw.get(name)) for name in SECTIONS}
    except TypeError as e:
        raise ConfigError(str(e)) from None

    base = Path(base)
    sections["data"] = replace(sections["data"], path=_resolve(sections["data"].path, base))
    sections["domain"] = replace(sections["domain"], artifact=_resolve(sections["domain"].artifact, base))
    sections["output"] = replace(sections["output"], directory=_resolve(sections["output"].directory, base))
    config = RunConfig(**sections, source=source)
    _validate(config)
    return config


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """
    Read a run configuration

    Args:
        path: YAML file, or JSON when the suffix is .json; None gives the defaults

    Returns:
        Validated RunConfig
    """
    if path is None:
        return config_from_dict({}, Path.cwd())
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = json.load(f) if path.suffix.lower() == ".json" else yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from None
    config = config_from_dict(raw, path.parent.resolve(), source=str(path))
    logger.info(f"Loaded configuration from {path}")
    return config


def apply_overrides(config: RunConfig, seed: Optional[int] = None, threads: Optional[int] = None,
                    maximize: Optional[bool] = None, min_ei: Optional[float] = None) -> RunConfig:
    """Command-line flags over file values; threads fall back to SIMPLEX_EGO_THREADS"""
    run, ei = config.run, config.ei
    if seed is not None:
        run = replace(run, seed=seed)
    if threads is None and os.getenv(THREADS_ENV):
        try:
            threads = int(os.getenv(THREADS_ENV))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from None
    if threads is not None:
        run = replace(run, threads=threads)
    if maximize is not None:
        run = replace(run, maximize=maximize)
    if min_ei is not None:
        ei = replace(ei, min_ei=min_ei)
    config = replace(config, run=run, ei=ei)
    _validate(config)
    return config
