"""Deterministic permutation variable importance for fixed predictive models."""

__version__ = "0.1.0"

from .data import DataMatrix, FeatureMeta, FoldPlan, ImportanceReport, TargetVector, kfold, load_bundled, load_csv
from .direct import breiman_scores, direct_scores, dominance_check, prescreen
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DegenerateImportanceError,
    DetviError,
    PredictorError,
)
from .permutations import Permutation, apply_index_shift, apply_rank_shift, cyclic_shift, min_displacement
from .predictors import LinearModel, PredictorHandle, fit_lasso, fit_logistic, fit_ols, fit_sparse, ground_truth_importance
from .systemic import CorrelationGraph, audit_feature, calibrate_threshold, systemic_scores

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "CorrelationGraph",
    "DataError",
    "DataMatrix",
    "DegenerateImportanceError",
    "DetviError",
    "FeatureMeta",
    "FoldPlan",
    "ImportanceReport",
    "LinearModel",
    "Permutation",
    "PredictorError",
    "PredictorHandle",
    "TargetVector",
    "apply_index_shift",
    "apply_rank_shift",
    "audit_feature",
    "breiman_scores",
    "calibrate_threshold",
    "cyclic_shift",
    "direct_scores",
    "dominance_check",
    "fit_lasso",
    "fit_logistic",
    "fit_ols",
    "fit_sparse",
    "ground_truth_importance",
    "kfold",
    "load_bundled",
    "load_csv",
    "min_displacement",
    "prescreen",
    "systemic_scores",
]
