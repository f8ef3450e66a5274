"""
simplex-ego - efficient global optimization over empirically estimated curve domains
Expert-constraint and kernel-density domains for positive mean-one curves
"""
from .acquisition import (
    AcquisitionProblem,
    ExpertSpace,
    KdeSpace,
    PluginRule,
    SearchBudget,
    expected_improvement,
    maximize_ei,
    plugin_value,
)
from .basis import SplineBasis, build_basis, project, project_curveset, synthesize
from .cli import main
from .curves import Curve, CurveSet, Grid, interpolate, load_curveset, normalize, save_curveset
from .density import KdeModel, compute_threshold, density_at, fit_bandwidths, fit_kde, is_admissible
from .errors import SimplexEgoError
from .expert_domain import ExpertConfig, ExpertDomain, contains, fit_expert_domain, fuel_rod_preset, sample_candidates
from .optimizer import EgoSettings, EgoTrace, Objective, RunReport, export_trace, init_design, load_trace, run_ego
from .simplex import HyperplaneMap
from .surrogate import GpSurrogate, fit_gp, predict

__version__ = "0.1.0"
