"""Penalized exponential-family simultaneous component analysis.

Fits a shared low-rank structure to several row-aligned data blocks of
quantitative, binary or count type, and separates global, local common and
distinct variation with group concave penalties on the loadings.
"""

from .dispersion import estimate_dispersion, select_rank, weighted_pca
from .evaluate import assign_structures, modified_rv, recovery_report, rmse
from .exceptions import (
    ContractError,
    DivergenceError,
    EstimationError,
    InvalidStateError,
    PescaError,
    SimulationInfeasibleError,
    StratificationError,
)
from .expfam import DataBlock, Distribution, block_neg_loglik, curvature_bound, log_partition, pseudo_data
from .penalty import PenaltySpec, group_prox, penalty_value, supergradient
from .selection import cv_error, lambda_grid, make_holdout, select, select_mixed, select_single_type
from .simulate import SimulationSpec, preset_spec, simulate_blocks
from .solver import EscaModel, FitConfig, FitResult, fit, objective, variation_explained

__version__ = "0.1.0"

__all__ = [
    "ContractError", "DataBlock", "Distribution", "DivergenceError", "EscaModel",
    "EstimationError", "FitConfig", "FitResult", "InvalidStateError", "PenaltySpec",
    "PescaError", "SimulationInfeasibleError", "SimulationSpec", "StratificationError",
    "assign_structures", "block_neg_loglik", "curvature_bound", "cv_error",
    "estimate_dispersion", "fit", "group_prox", "lambda_grid", "log_partition",
    "make_holdout", "modified_rv", "objective", "penalty_value", "preset_spec",
    "pseudo_data", "recovery_report", "rmse", "select", "select_mixed",
    "select_rank", "select_single_type", "simulate_blocks", "supergradient",
    "variation_explained", "weighted_pca",
]
