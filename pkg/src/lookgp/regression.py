"""LOO-k regression: objective, mini-batch estimate, training loop and prediction."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .kernels import Hyperparams, KernelKind, as_kind
from .linalg import LOG_2PI, ConditionalBatch, GaussianPredictive
from .neighbors import Backend, NeighborIndex, build_index
from .optim import TrainTrace, maximize

_CHUNK = 1024


@dataclass
class TrainConfig:
    """Optimization settings shared by every trainer.

    ``beta1=None`` picks the objective's default (0.9 for LOO-k and the
    classifiers, 0.5 for the marginal-likelihood baselines).
    """

    k: int = 32
    batch_size: int = 128
    n_steps: int = 2000
    nn_refresh: int = 50
    lr: float = 0.03
    beta1: float | None = None
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    backend: str = "auto"

    def validate(self, n_points: int | None = None, need_k_below_n: bool = True):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.nn_refresh < 1:
            raise ValueError(f"nn_refresh must be >= 1, got {self.nn_refresh}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")
        Backend(self.backend)
        if n_points is not None:
            if need_k_below_n and self.k > n_points - 1:
                raise ValueError(f"k={self.k} must be at most N-1={n_points - 1}")
            if self.batch_size > n_points:
                raise ValueError(f"batch_size={self.batch_size} exceeds N={n_points}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train_config fields: {sorted(unknown)}")
        return cls(**d)


def _check_xy(X, y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    return X, y


def gaussian_conditional_terms(X, y, hp: Hyperparams, kind, Xq, yq, nbr, weights=None, grad=False):
    """Log densities of ``yq`` under GP conditionals on padded neighbor sets.

    Parameters
    ----------
    X, y : training inputs and targets
    Xq : array (B, D), yq : array (B,)
    nbr : array (B, k) of int
        Indices into ``X``; ``-1`` entries are padding and must trail.
    weights : array (B,), optional
        Weights of the terms in the scalar whose gradient is returned.

    Returns
    -------
    terms : array (B,)
    grad : array (D + 3,), only when ``grad`` is true
    """
    B = nbr.shape[0]
    w = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
    counts = np.count_nonzero(nbr >= 0, axis=1)
    terms = np.empty(B)
    g = np.zeros(hp.dim + 3)
    s2n = hp.noise_var
    for c in np.unique(counts):
        rows = np.nonzero(counts == c)[0]
        nb = nbr[rows, :c]
        cb = ConditionalBatch(Xq[rows], X[nb], y[nb] - hp.mean_const, np.full(nb.shape, s2n), hp, kind)
        v = cb.var + s2n
        r = yq[rows] - hp.mean_const - cb.mean
        terms[rows] = -0.5 * (LOG_2PI + np.log(v) + r * r / v)
        if grad:
            wr = w[rows]
            g_mean = wr * r / v
            g_var = wr * (-0.5 / v + 0.5 * r * r / (v * v))
            g_ls, g_sk, g_t, g_noise = cb.vjp(g_mean, g_var)
            g[: hp.dim] += g_ls
            g[hp.dim] += g_sk
            g[hp.dim + 1] += 2.0 * s2n * (np.sum(g_noise) + np.sum(g_var))
            g[hp.dim + 2] += np.sum(g_mean) - np.sum(g_t)
    if grad:
        return terms, g
    return terms


def loo_k_minibatch(X, y, hp: Hyperparams, kind, k: int, index: NeighborIndex, batch_idx):
    """Batch average of the LOO-k log densities and its gradient.

    The gradient covers ``[log_lengthscales, log_kernel_scale, log_obs_noise,
    mean_const]``. Neighbors come from ``index`` (which may be stale) while
    kernel values use the live ``hp``.
    """
    X, y = _check_xy(X, y)
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    if len(np.unique(batch_idx)) != len(batch_idx):
        raise ValueError("batch indices must be distinct")
    _check_k(k, X.shape[0])
    nbr = index.self_neighbors(k)[batch_idx]
    B = len(batch_idx)
    terms, g = gaussian_conditional_terms(X, y, hp, kind, X[batch_idx], y[batch_idx], nbr, np.full(B, 1.0 / B), True)
    return float(np.mean(terms)), g


def _check_k(k, N):
    if k < 1 or k > N - 1:
        raise ValueError(f"k={k} must satisfy 1 <= k <= N-1={N - 1}")


def loo_k_objective(X, y, hp: Hyperparams, kind, k: int, index: NeighborIndex) -> float:
    """Average leave-one-out log density with each point conditioned on its k nearest neighbors."""
    X, y = _check_xy(X, y)
    N = X.shape[0]
    _check_k(k, N)
    table = index.self_neighbors(k)
    total = 0.0
    for s in range(0, N, _CHUNK):
        idx = np.arange(s, min(N, s + _CHUNK))
        total += float(np.sum(gaussian_conditional_terms(X, y, hp, kind, X[idx], y[idx], table[idx])))
    return total / N


def predict(X_train, y_train, hp: Hyperparams, kind, k: int, index: NeighborIndex, X_test) -> GaussianPredictive:
    """k-nearest-neighbor GP predictive at each test point (arrays of length M)."""
    X_train, y_train = _check_xy(X_train, y_train)
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    if X_test.shape[1] != X_train.shape[1]:
        raise ValueError("dimension mismatch between train and test inputs")
    M = X_test.shape[0]
    mean = np.empty(M)
    var = np.empty(M)
    for s in range(0, M, _CHUNK):
        sl = slice(s, min(M, s + _CHUNK))
        nbr = index.query_batch(X_test[sl], k)
        cb = ConditionalBatch(
            X_test[sl], X_train[nbr], y_train[nbr] - hp.mean_const, np.full(nbr.shape, hp.noise_var), hp, kind
        )
        mean[sl] = hp.mean_const + cb.mean
        var[sl] = cb.var
    return GaussianPredictive(mean, var, var + hp.noise_var)


def train(X, y, hp0: Hyperparams, kind=KernelKind.MATERN52, cfg: TrainConfig | None = None):
    """Fit hyperparameters by Adam ascent on the mini-batch LOO-k objective.

    Returns
    -------
    hp : Hyperparams
    trace : TrainTrace
    """
    X, y = _check_xy(X, y)
    cfg = (cfg or TrainConfig()).validate(X.shape[0])
    kind = as_kind(kind)
    state = {}

    def rebuild(theta):
        state["index"] = build_index(X, theta[:-3], cfg.backend)
        state["index"].self_neighbors(cfg.k)

    def objective(theta, batch, rng):
        return loo_k_minibatch(X, y, Hyperparams.from_vector(theta), kind, cfg.k, state["index"], batch)

    theta, trace = maximize(
        hp0.to_vector(),
        objective,
        n_steps=cfg.n_steps,
        lr=cfg.lr,
        beta1=0.9 if cfg.beta1 is None else cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        seed=cfg.seed,
        n_points=X.shape[0],
        batch_size=min(cfg.batch_size, X.shape[0]),
        rebuild=rebuild,
        refresh_every=cfg.nn_refresh,
    )
    return Hyperparams.from_vector(theta), trace


def hyperparams_to_json(hp: Hyperparams, trace: TrainTrace | None = None, **extra) -> str:
    d = hp.to_dict()
    d["trace"] = trace.to_dict() if trace is not None else None
    d.update(extra)
    return json.dumps(d, indent=2)


def hyperparams_from_json(text: str):
    d = json.loads(text)
    trace = TrainTrace.from_dict(d["trace"]) if d.get("trace") else None
    return Hyperparams.from_dict(d), trace


def default_hyperparams(X, y=None) -> Hyperparams:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return Hyperparams(np.zeros(X.shape[1]), 0.0, math.log(0.5), float(np.mean(y)) if y is not None else 0.0)
