"""Gaussian processes trained with nearest-neighbor leave-one-out objectives."""

__version__ = "0.1.0"

from .baselines import Ordering, mll_k_objective, pca_ordering, train_baseline, vecchia_objective
from .classification import (
    ClassDataset,
    ClassifierState,
    binary_loo_objective,
    multiclass_objective,
    multiclass_predict,
    predict_binary,
    train_classifier,
)
from .estimators import LOOKGPClassifier, LOOKGPRegressor
from .kernels import Hyperparams, KernelKind, kernel_eval, kernel_matrix
from .linalg import FactorizationError, GaussianPredictive, exact_mll, predictive
from .neighbors import NeighborIndex, build_index
from .optim import TrainingError
from .regression import TrainConfig, loo_k_minibatch, loo_k_objective, predict, train

__all__ = [
    "ClassDataset",
    "ClassifierState",
    "FactorizationError",
    "GaussianPredictive",
    "Hyperparams",
    "KernelKind",
    "LOOKGPClassifier",
    "LOOKGPRegressor",
    "NeighborIndex",
    "Ordering",
    "TrainConfig",
    "TrainingError",
    "binary_loo_objective",
    "build_index",
    "exact_mll",
    "kernel_eval",
    "kernel_matrix",
    "loo_k_minibatch",
    "loo_k_objective",
    "mll_k_objective",
    "multiclass_objective",
    "multiclass_predict",
    "pca_ordering",
    "predict",
    "predict_binary",
    "predictive",
    "train",
    "train_baseline",
    "train_classifier",
    "vecchia_objective",
]
