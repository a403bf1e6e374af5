"""
High-dimensional MMM mediation analysis - Source Package
"""
from .core_types import CoefficientSet, Dataset, PenaltyConfig, assemble_dataset, scale_columns
from .solver import SolverOptions, solve_elastic_net, fit_multiresponse, check_kkt
from .estimator import MediationEffects, fit_mmm, top_paths
from .cross_validation import PenaltyGrid, cross_validate, cv_select, resolve_grid
from .predict import predict_mediators, predict_outcomes, predict_outcomes_observed_m
from .inference import bootstrap_indirect, check_eic, run_diagnostics
from .simulation import SimConfig, generate_dataset, generate_truth, run_grid
__all__ = [
    "CoefficientSet",
    "Dataset",
    "PenaltyConfig",
    "assemble_dataset",
    "scale_columns",
    "SolverOptions",
    "solve_elastic_net",
    "fit_multiresponse",
    "check_kkt",
    "MediationEffects",
    "fit_mmm",
    "top_paths",
    "cross_validate",
    "cv_select",
    "PenaltyGrid",
    "resolve_grid",
    "predict_mediators",
    "predict_outcomes",
    "predict_outcomes_observed_m",
    "bootstrap_indirect",
    "check_eic",
    "run_diagnostics",
    "SimConfig",
    "generate_dataset",
    "generate_truth",
    "run_grid",
]
