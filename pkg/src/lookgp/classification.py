"""LOO-k GP classification with Pòlya-Gamma augmentation.

Conditioned on the auxiliary variables ``omega``, a logistic GP classifier is
a heteroscedastic GP regressor on pseudo-targets ``y / (2 omega)`` with noise
variances ``1 / omega``. Each held-out point conditions only on the sites of
its k nearest neighbors. Multi-class problems run one such binary head per
class (one-against-all) and normalize the K Bernoulli probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .kernels import Hyperparams, KernelKind, as_kind
from .linalg import ConditionalBatch, predictive
from .neighbors import NeighborIndex, build_index
from .optim import TrainTrace, maximize
from .polya_gamma import (
    GHRule,
    PGVariational,
    gauss_hermite,
    gh_log_expect_sigmoid,
    kl_sites,
    q_sample,
    q_sample_and_jac,
)
from .regression import TrainConfig

VAR_FLOOR = 1e-12


@dataclass
class ClassDataset:
    """Inputs with labels in {-1, +1} (shape (N,)) or one-hot {-1, +1} rows (shape (N, K))."""

    X: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.labels = np.asarray(self.labels, dtype=float)
        if self.labels.shape[0] != self.X.shape[0]:
            raise ValueError("labels and X must have the same number of rows")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be encoded as -1/+1")
        if self.labels.ndim == 2:
            if self.labels.shape[1] < 2:
                raise ValueError("multi-class labels need K >= 2 columns")
            if not np.all(np.sum(self.labels > 0, axis=1) == 1):
                raise ValueError("each one-hot row must contain exactly one +1")
        elif self.labels.ndim != 1:
            raise ValueError("labels must be a vector or an (N, K) matrix")

    @property
    def multiclass(self) -> bool:
        return self.labels.ndim == 2

    @property
    def Y(self) -> np.ndarray:
        """Labels as an (N, H) matrix with one column per head."""
        return self.labels if self.multiclass else self.labels[:, None]

    @classmethod
    def from_classes(cls, X, y_idx, n_classes: int) -> "ClassDataset":
        y_idx = np.asarray(y_idx, dtype=int)
        if n_classes == 2:
            return cls(X, np.where(y_idx == 1, 1.0, -1.0))
        Y = -np.ones((len(y_idx), n_classes))
        Y[np.arange(len(y_idx)), y_idx] = 1.0
        return cls(X, Y)


@dataclass
class ClassifierState:
    """Trained classifier: one set of kernel hyperparameters per head plus q(omega).

    ``q`` has shape (N,) for binary problems and (N, K) for K classes. The
    observation-noise field of each head's hyperparameters is ignored: the
    noise comes from ``1 / omega``.
    """

    heads: list
    q: PGVariational
    kind: KernelKind
    k: int

    @property
    def multiclass(self) -> bool:
        return self.q.m.ndim == 2

    @property
    def index_log_lengthscales(self) -> np.ndarray:
        return np.mean([h.log_lengthscales for h in self.heads], axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "k": self.k,
            "heads": [h.to_dict() for h in self.heads],
            "variational": self.q.to_dict(),
        }

    @classmethod
    def from_dict(cls, d) -> "ClassifierState":
        return cls(
            [Hyperparams.from_dict(h) for h in d["heads"]],
            PGVariational.from_dict(d["variational"]),
            as_kind(d["kind"]),
            int(d["k"]),
        )


def _zero_mean(hp: Hyperparams) -> Hyperparams:
    return Hyperparams(hp.log_lengthscales, hp.log_kernel_scale, hp.log_obs_noise, 0.0)


def conditional_posterior(x_n, X_nb, y_nb, omega_nb, hp: Hyperparams, kind=KernelKind.RBF):
    """Latent mean and variance at ``x_n`` given neighbor labels and their PG variates."""
    omega_nb = np.asarray(omega_nb, dtype=float).ravel()
    if np.any(~(omega_nb > 0)):
        raise ValueError("omega must be positive")
    y_nb = np.asarray(y_nb, dtype=float).ravel()
    pred = predictive(x_n, X_nb, y_nb / (2.0 * omega_nb), 1.0 / omega_nb, _zero_mean(hp), kind, noise_star=0.0)
    return pred.mean, pred.var_latent


def _head_moments(X, Xq, nbr, ycol, omega, hp, kind):
    om = omega[nbr]
    cb = ConditionalBatch(Xq, X[nbr], ycol[nbr] / (2.0 * om), 1.0 / om, hp, kind)
    return cb, np.maximum(cb.var, VAR_FLOOR)


def _objective(X, Y, heads, m, s, kind, nbr, batch_idx, noise, gh, grad):
    """Shared binary / multi-class LOO-k objective with optional gradients.

    ``Y``, ``m``, ``s`` and ``noise`` are (N, H). Returns the value and, when
    requested, gradients for each head's flat hyperparameters, ``m`` and
    ``log s``.
    """
    N, H = Y.shape
    B = len(batch_idx)
    Xq = X[batch_idx]
    cbs, mus, vars_, jac = [], [], [], []
    for h in range(H):
        omega, d_m, d_ls = q_sample_and_jac(m[:, h], s[:, h], noise[:, h])
        cb, var = _head_moments(X, Xq, nbr, Y[:, h], omega, heads[h], kind)
        cbs.append(cb)
        mus.append(cb.mean)
        vars_.append(var)
        jac.append((omega, d_m, d_ls))
    mu = np.stack(mus, axis=1)
    var = np.stack(vars_, axis=1)
    if H == 1:
        y = Y[batch_idx, 0]
        logp, g_mu1, g_var1 = gh_log_expect_sigmoid(y, mu[:, 0], var[:, 0], gh, grad=True)
        g_mu, g_var = g_mu1[:, None], g_var1[:, None]
    else:
        ones = np.ones_like(mu)
        logpt, dmu, dvar = gh_log_expect_sigmoid(ones, mu, var, gh, grad=True)
        c = np.argmax(Y[batch_idx], axis=1)
        lse = logsumexp(logpt, axis=1)
        logp = logpt[np.arange(B), c] - lse
        coef = -np.exp(logpt - lse[:, None])
        coef[np.arange(B), c] += 1.0
        g_mu, g_var = coef * dmu, coef * dvar
    kl_terms = kl_sites(m, s, gh, grad=grad)
    kl_scale = B / N
    kl_total = np.sum(kl_terms[0] if grad else kl_terms)
    value = float(np.mean(logp) - kl_scale * kl_total)
    if not grad:
        return value
    kl, g_m_kl, g_ls_kl = kl_terms
    g_heads = []
    g_m = -kl_scale * g_m_kl
    g_logs = -kl_scale * g_ls_kl
    for h in range(H):
        cb = cbs[h]
        floored = cb.var < VAR_FLOOR
        gv = np.where(floored, 0.0, g_var[:, h] / B)
        g_ls, g_sk, g_t, g_noise = cb.vjp(g_mu[:, h] / B, gv)
        g_heads.append(np.r_[g_ls, g_sk, 0.0, 0.0])
        omega, d_m, d_ls = jac[h]
        om = omega[nbr]
        g_om_nb = g_t * (-Y[nbr, h] / (2.0 * om * om)) + g_noise * (-1.0 / (om * om))
        g_om = np.zeros(N)
        np.add.at(g_om, nbr.ravel(), g_om_nb.ravel())
        g_m[:, h] += g_om * d_m
        g_logs[:, h] += g_om * d_ls
    return value, {"heads": g_heads, "m": g_m, "log_s": g_logs}


def _as_matrix(a):
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _run_objective(ds: ClassDataset, state: ClassifierState, index, gh, batch_idx, noise, return_grad):
    if ds.multiclass != state.multiclass:
        raise ValueError("dataset and classifier state disagree on binary vs multi-class")
    batch_idx = np.asarray(batch_idx, dtype=np.int64)
    nbr = index.self_neighbors(state.k)[batch_idx]
    out = _objective(
        ds.X,
        ds.Y,
        state.heads,
        _as_matrix(state.q.m),
        _as_matrix(state.q.s),
        state.kind,
        nbr,
        batch_idx,
        _as_matrix(noise),
        gh or gauss_hermite(16),
        return_grad,
    )
    if not return_grad or state.multiclass:
        return out
    value, g = out
    return value, {"heads": g["heads"], "m": g["m"][:, 0], "log_s": g["log_s"][:, 0]}


def binary_loo_objective(ds, state, index, gh=None, batch_idx=None, noise=None, return_grad=False):
    """Stochastic LOO-k variational objective for binary labels.

    Batch average of ``log E[sigmoid(y_n f_n)]`` under one reparameterized
    draw of omega, minus ``B/N`` times the total KL over all sites.
    """
    batch_idx = np.arange(ds.X.shape[0]) if batch_idx is None else batch_idx
    noise = np.zeros(state.q.m.shape) if noise is None else noise
    return _run_objective(ds, state, index, gh, batch_idx, noise, return_grad)


def multiclass_objective(ds, state, index, gh=None, batch_idx=None, noise=None, return_grad=False):
    """Multi-class analogue of :func:`binary_loo_objective` with jointly normalized heads."""
    batch_idx = np.arange(ds.X.shape[0]) if batch_idx is None else batch_idx
    noise = np.zeros(state.q.m.shape) if noise is None else noise
    return _run_objective(ds, state, index, gh, batch_idx, noise, return_grad)


def inverse_moment_bonus(q: PGVariational) -> float:
    """``(1/8) sum E_q[1/omega]``: the nonnegative term left out of the objective."""
    return float(np.sum(np.exp(-q.m + 0.5 * q.s * q.s)) / 8.0)


def initial_state(ds: ClassDataset, k: int, kind=KernelKind.MATERN52) -> ClassifierState:
    D = ds.X.shape[1]
    H = ds.Y.shape[1]
    heads = [Hyperparams(np.zeros(D), 0.0, math.log(0.5), 0.0) for _ in range(H)]
    return ClassifierState(heads, PGVariational.init(ds.labels.shape[:1] + ((H,) if ds.multiclass else ())), as_kind(kind), k)


def train_classifier(ds: ClassDataset, cfg: TrainConfig | None = None, kind=KernelKind.MATERN52, state0=None, Q=16):
    """Jointly fit kernel hyperparameters and q(omega) by Adam on the stochastic objective.

    Returns
    -------
    state : ClassifierState
    trace : TrainTrace
    """
    N, D = ds.X.shape
    cfg = (cfg or TrainConfig()).validate(N)
    state0 = state0 or initial_state(ds, cfg.k, kind)
    kind = state0.kind
    Y = ds.Y
    H = Y.shape[1]
    P = D + 3
    gh = gauss_hermite(Q)
    m0, s0 = _as_matrix(state0.q.m), _as_matrix(state0.q.s)
    theta0 = np.r_[np.concatenate([h.to_vector() for h in state0.heads]), m0.ravel(), np.log(s0).ravel()]
    holder = {}

    def unpack(theta):
        heads = [Hyperparams.from_vector(theta[h * P : (h + 1) * P]) for h in range(H)]
        rest = theta[H * P :]
        return heads, rest[: N * H].reshape(N, H), np.exp(rest[N * H :]).reshape(N, H)

    def rebuild(theta):
        heads, _, _ = unpack(theta)
        holder["index"] = build_index(ds.X, np.mean([h.log_lengthscales for h in heads], axis=0), cfg.backend)
        holder["index"].self_neighbors(cfg.k)

    def objective(theta, batch, rng):
        heads, m, s = unpack(theta)
        noise = rng.standard_normal((N, H))
        nbr = holder["index"].self_neighbors(cfg.k)[batch]
        value, g = _objective(ds.X, Y, heads, m, s, kind, nbr, batch, noise, gh, True)
        return value, np.r_[np.concatenate(g["heads"]), g["m"].ravel(), g["log_s"].ravel()]

    theta, trace = maximize(
        theta0,
        objective,
        n_steps=cfg.n_steps,
        lr=cfg.lr,
        beta1=0.9 if cfg.beta1 is None else cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        seed=cfg.seed,
        n_points=N,
        batch_size=min(cfg.batch_size, N),
        rebuild=rebuild,
        refresh_every=cfg.nn_refresh,
    )
    heads, m, s = unpack(theta)
    if not ds.multiclass:
        m, s = m[:, 0], s[:, 0]
    return ClassifierState(heads, PGVariational(m, s), kind, cfg.k), trace


def train_binary(ds: ClassDataset, cfg: TrainConfig | None = None, kind=KernelKind.MATERN52, state0=None):
    if ds.multiclass:
        raise ValueError("train_binary needs -1/+1 labels; use train_classifier for multi-class data")
    return train_classifier(ds, cfg, kind, state0)


def _head_probabilities(state, X_train, labels, index, X_test, gh, seed):
    X_train = np.atleast_2d(np.asarray(X_train, dtype=float))
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    Y = _as_matrix(labels)
    m, s = _as_matrix(state.q.m), _as_matrix(state.q.s)
    q = PGVariational(m, s)
    omega = q_sample(q, np.random.default_rng(seed).standard_normal(m.shape))
    nbr = index.query_batch(X_test, state.k)
    gh = gh or gauss_hermite(16)
    out = np.empty((X_test.shape[0], Y.shape[1]))
    for h in range(Y.shape[1]):
        cb, var = _head_moments(X_train, X_test, nbr, Y[:, h], omega[:, h], state.heads[h], state.kind)
        out[:, h] = np.exp(gh_log_expect_sigmoid(np.ones(len(var)), cb.mean, var, gh))
    return out


def predict_binary(state: ClassifierState, X_train, labels, index: NeighborIndex, X_test, gh=None, seed: int = 0):
    """Probability of the +1 label at each test point under one seeded draw of omega."""
    if state.multiclass:
        raise ValueError("state is multi-class; use multiclass_predict")
    return _head_probabilities(state, X_train, labels, index, X_test, gh, seed)[:, 0]


def multiclass_predict(state: ClassifierState, X_train, labels, index: NeighborIndex, X_test, gh=None, seed: int = 0):
    """Class probabilities (M, K): one-against-all head probabilities normalized to sum to one."""
    if not state.multiclass:
        raise ValueError("state is binary; use predict_binary")
    pt = _head_probabilities(state, X_train, labels, index, X_test, gh, seed)
    total = pt.sum(axis=1, keepdims=True)
    assert np.all(total > 0)
    return pt / total


def classifier_index(X_train, state: ClassifierState, backend="auto") -> NeighborIndex:
    """Neighbor index shared by all heads (metric from the heads' mean log-lengthscales)."""
    return build_index(X_train, state.index_log_lengthscales, backend)
