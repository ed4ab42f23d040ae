"""Conditional-inference survival forests for interval-censored data."""

__version__ = "0.1.0"

from .core import DataError, Dataset, Interval, Schema, load_csv, write_csv
from .npmle import SurvivalCurve, logrank_scores, npmle_fit, turnbull_support
from .ctree import TreeConfig, find_split, node_test, select_variable
from .cforest import (Forest, ForestConfig, fit_ctree, fit_forest, oob_predict,
                      predict_curve, predict_curves)
from .tuning import auto_tune, interval_brier, mtry_pool, rule_15_default_6, tune_mtry
from .evaluate import integrated_L2, loocv, median_time, outside_metrics
from .simgen import ScenarioSpec, generate

__all__ = [
    "DataError", "Dataset", "Interval", "Schema", "load_csv", "write_csv",
    "SurvivalCurve", "logrank_scores", "npmle_fit", "turnbull_support",
    "TreeConfig", "find_split", "node_test", "select_variable",
    "Forest", "ForestConfig", "fit_ctree", "fit_forest", "oob_predict",
    "predict_curve", "predict_curves",
    "auto_tune", "interval_brier", "mtry_pool", "rule_15_default_6", "tune_mtry",
    "integrated_L2", "loocv", "median_time", "outside_metrics",
    "ScenarioSpec", "generate",
]
