"""Synthetic data, metrics and experiment orchestration."""

from .data import (
    Dataset,
    Normalizer,
    SplitSpec,
    WarpKind,
    WarpSpec,
    apply_warp,
    degenerate_augment,
    normalize,
    read_csv,
    sample_gp_dataset,
    split_indices,
    write_csv,
)
from .experiments import ConfigError, ExperimentConfig, run_experiment
from .metrics import MetricsReport, evaluate_classification, evaluate_regression, gaussian_crps

__all__ = [
    "ConfigError",
    "Dataset",
    "ExperimentConfig",
    "MetricsReport",
    "Normalizer",
    "SplitSpec",
    "WarpKind",
    "WarpSpec",
    "apply_warp",
    "degenerate_augment",
    "evaluate_classification",
    "evaluate_regression",
    "gaussian_crps",
    "normalize",
    "read_csv",
    "run_experiment",
    "sample_gp_dataset",
    "split_indices",
    "write_csv",
]
