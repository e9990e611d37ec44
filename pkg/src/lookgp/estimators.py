"""scikit-learn style wrappers around the functional training and prediction code."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import baselines, classification, regression
from .kernels import as_kind
from .linalg import LOG_2PI, GaussianPredictive, dense_predict
from .neighbors import build_index

REGRESSION_OBJECTIVES = ("loo_k", "mll", "mll_k", "vecchia")


class _TrainParams:
    def _train_config(self, n_points):
        return regression.TrainConfig(
            k=self.k,
            batch_size=min(self.batch_size, n_points),
            n_steps=self.n_steps,
            nn_refresh=self.nn_refresh,
            lr=self.lr,
            seed=self.random_state,
            backend=self.backend,
        )


class LOOKGPRegressor(_TrainParams, RegressorMixin, BaseEstimator):
    """GP regressor with nearest-neighbor predictions.

    Parameters
    ----------
    k : int
        Number of neighbors used in training and prediction.
    kernel : {"matern52", "rbf"}
    objective : {"loo_k", "mll", "mll_k", "vecchia"}
        Training objective. ``"mll"`` is the exact marginal likelihood and
        predicts with the dense GP; all others predict from the k nearest
        training points.
    batch_size, n_steps, nn_refresh, lr : optimizer settings
    random_state : int
    backend : {"auto", "brute", "kdtree"}

    Attributes
    ----------
    hyperparams_ : Hyperparams
    trace_ : TrainTrace
    """

    def __init__(
        self,
        k=32,
        kernel="matern52",
        objective="loo_k",
        batch_size=128,
        n_steps=2000,
        nn_refresh=50,
        lr=0.03,
        random_state=0,
        backend="auto",
    ):
        self.k = k
        self.kernel = kernel
        self.objective = objective
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.nn_refresh = nn_refresh
        self.lr = lr
        self.random_state = random_state
        self.backend = backend

    def fit(self, X, y, hp0=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if self.objective not in REGRESSION_OBJECTIVES:
            raise ValueError(f"objective must be one of {REGRESSION_OBJECTIVES}, got {self.objective!r}")
        kind = as_kind(self.kernel)
        cfg = self._train_config(X.shape[0])
        hp0 = hp0 or regression.default_hyperparams(X, y)
        if self.objective == "loo_k":
            hp, trace = regression.train(X, y, hp0, kind, cfg)
        else:
            hp, trace = baselines.train_baseline(self.objective, X, y, hp0, kind, cfg)
        self.hyperparams_, self.trace_ = hp, trace
        self.X_train_, self.y_train_ = X, y
        self.n_features_in_ = X.shape[1]
        self.index_ = None if self.objective == "mll" else build_index(X, hp, self.backend)
        return self

    def predict_dist(self, X) -> GaussianPredictive:
        check_is_fitted(self, "hyperparams_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        kind = as_kind(self.kernel)
        if self.index_ is None:
            return dense_predict(self.X_train_, self.y_train_, self.hyperparams_, kind, X)
        k = min(self.k, self.X_train_.shape[0])
        return regression.predict(self.X_train_, self.y_train_, self.hyperparams_, kind, k, self.index_, X)

    def predict(self, X, return_std=False):
        pred = self.predict_dist(X)
        if return_std:
            return pred.mean, pred.std()
        return pred.mean

    def log_likelihood(self, X, y):
        """Per-point predictive log densities of ``y``."""
        pred = self.predict_dist(X)
        y = np.asarray(y, dtype=float).ravel()
        v = pred.var_observed
        return -0.5 * (LOG_2PI + np.log(v) + (y - pred.mean) ** 2 / v)


class LOOKGPClassifier(_TrainParams, ClassifierMixin, BaseEstimator):
    """Pòlya-Gamma augmented GP classifier trained with the LOO-k objective.

    Two classes use a single head; more classes use one-against-all heads
    whose probabilities are normalized.
    """

    def __init__(
        self,
        k=32,
        kernel="matern52",
        batch_size=128,
        n_steps=2000,
        nn_refresh=50,
        lr=0.03,
        random_state=0,
        backend="auto",
        n_quadrature=16,
    ):
        self.k = k
        self.kernel = kernel
        self.batch_size = batch_size
        self.n_steps = n_steps
        self.nn_refresh = nn_refresh
        self.lr = lr
        self.random_state = random_state
        self.backend = backend
        self.n_quadrature = n_quadrature

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        codes = self._encoder.transform(y)
        K = len(self.classes_)
        if K < 2:
            raise ValueError("need at least two classes")
        ds = classification.ClassDataset.from_classes(X, codes, K)
        cfg = self._train_config(X.shape[0])
        self.state_, self.trace_ = classification.train_classifier(ds, cfg, as_kind(self.kernel), Q=self.n_quadrature)
        self.X_train_, self.labels_ = X, ds.labels
        self.n_features_in_ = X.shape[1]
        self.index_ = classification.classifier_index(X, self.state_, self.backend)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "state_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        gh = classification.gauss_hermite(self.n_quadrature)
        if self.state_.multiclass:
            return classification.multiclass_predict(
                self.state_, self.X_train_, self.labels_, self.index_, X, gh, self.random_state
            )
        p = classification.predict_binary(self.state_, self.X_train_, self.labels_, self.index_, X, gh, self.random_state)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]
