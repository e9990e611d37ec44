"""Predictive metrics: NLL, RMSE, Gaussian CRPS and classification error."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import norm

from ..linalg import LOG_2PI, GaussianPredictive


@dataclass
class MetricsReport:
    nll: float = math.nan
    rmse: float = math.nan
    crps: float = math.nan
    error: float = math.nan

    def to_dict(self) -> dict:
        return asdict(self)


def gaussian_crps(mean, std, y):
    """Closed-form CRPS of ``N(mean, std^2)`` at ``y``, elementwise."""
    std = np.asarray(std, dtype=float)
    z = (np.asarray(y, dtype=float) - mean) / std
    return std * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi))


def gaussian_log_density(mean, var, y):
    return -0.5 * (LOG_2PI + np.log(var) + (np.asarray(y, dtype=float) - mean) ** 2 / var)


def evaluate_regression(preds: GaussianPredictive, y_test) -> MetricsReport:
    y = np.asarray(y_test, dtype=float).ravel()
    mean = np.ravel(preds.mean)
    var = np.ravel(preds.var_observed)
    if mean.shape != y.shape:
        raise ValueError(f"{mean.size} predictions for {y.size} targets")
    if np.any(~(var > 0)):
        raise ValueError("predictive variances must be positive")
    return MetricsReport(
        nll=float(-np.mean(gaussian_log_density(mean, var, y))),
        rmse=float(np.sqrt(np.mean((y - mean) ** 2))),
        crps=float(np.mean(gaussian_crps(mean, np.sqrt(var), y))),
    )


def evaluate_classification(proba, y_test) -> MetricsReport:
    """Error rate and NLL for class probabilities ``proba`` (M, K) and integer labels."""
    proba = np.asarray(proba, dtype=float)
    y = np.asarray(y_test).astype(np.int64).ravel()
    if proba.ndim != 2 or proba.shape[0] != y.shape[0]:
        raise ValueError("proba must have shape (len(y_test), n_classes)")
    p = np.clip(proba[np.arange(len(y)), y], 1e-300, 1.0)
    return MetricsReport(nll=float(-np.mean(np.log(p))), error=float(np.mean(np.argmax(proba, axis=1) != y)))
