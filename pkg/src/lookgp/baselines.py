"""Marginal-likelihood baselines: exact MLL, MLL-k and Vecchia."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .kernels import Hyperparams, KernelKind, as_kind
from .linalg import JointMLLBatch, exact_mll_and_grad
from .neighbors import NeighborIndex, _rank, _sqdist_rows, build_index
from .optim import maximize
from .regression import TrainConfig, _check_xy, gaussian_conditional_terms

EXACT_MLL_MAX_N = 4096


class Objective(str, Enum):
    EXACT_MLL = "mll"
    MLL_K = "mll_k"
    VECCHIA = "vecchia"


@dataclass
class Ordering:
    """A permutation of the data; ``perm[p]`` is the index of the point at position ``p``."""

    perm: np.ndarray
    method: str = "given"

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        if not np.array_equal(np.sort(self.perm), np.arange(len(self.perm))):
            raise ValueError("ordering must be a permutation of 0..N-1")

    @property
    def rank(self) -> np.ndarray:
        r = np.empty_like(self.perm)
        r[self.perm] = np.arange(len(self.perm))
        return r


def first_principal_direction(X, tol: float = 1e-8, max_iter: int = 10_000) -> np.ndarray:
    """Leading eigenvector of the centered Gram matrix by power iteration.

    The sign is fixed so that the largest-magnitude component is positive.
    """
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc
    D = C.shape[0]
    v = np.ones(D) / np.sqrt(D)
    for _ in range(max_iter):
        w = C @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            break
        w /= nrm
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v * np.sign(v[np.argmax(np.abs(v))])


def pca_ordering(X) -> Ordering:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    proj = (X - X.mean(axis=0)) @ first_principal_direction(X)
    return Ordering(np.argsort(proj, kind="stable"), "pca1")


def vecchia_neighbors(X, log_lengthscales, k: int, ordering: Ordering) -> np.ndarray:
    """For every point, its ``k`` nearest predecessors in ``ordering`` (padded with -1).

    Row ``i`` of the result belongs to point ``i`` (not to position ``i``).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    N = X.shape[0]
    U = X / np.exp(np.asarray(log_lengthscales, dtype=float))
    rank = ordering.rank
    out = np.full((N, k), -1, dtype=np.int64)
    step = max(1, 2_000_000 // max(1, N))
    for s in range(0, N, step):
        rows = np.arange(s, min(N, s + step))
        d2 = _sqdist_rows(U[rows], U)
        d2[rank[None, :] >= rank[rows][:, None]] = np.inf
        t = np.minimum(k, rank[rows])
        idx, _ = _rank(d2, np.broadcast_to(np.arange(N), d2.shape), min(k, N))
        for j in range(len(rows)):
            out[rows[j], : t[j]] = idx[j, : t[j]]
    return out


def vecchia_objective(X, y, hp: Hyperparams, kind, k: int, ordering: Ordering, neighbors=None, batch_idx=None, return_grad=False):
    """Average of ordered univariate conditionals, each on its k nearest predecessors."""
    X, y = _check_xy(X, y)
    if k < 1:
        raise ValueError("k must be >= 1")
    nbr_all = vecchia_neighbors(X, hp.log_lengthscales, k, ordering) if neighbors is None else neighbors
    idx = np.arange(X.shape[0]) if batch_idx is None else np.asarray(batch_idx, dtype=np.int64)
    B = len(idx)
    res = gaussian_conditional_terms(X, y, hp, kind, X[idx], y[idx], nbr_all[idx], np.full(B, 1.0 / B), return_grad)
    if return_grad:
        terms, g = res
        return float(np.mean(terms)), g
    return float(np.mean(res))


def mll_k_sets(index: NeighborIndex, k: int) -> np.ndarray:
    """Each point together with its ``k - 1`` nearest neighbors, shape (N, min(k, N))."""
    N = index.n_points
    own = np.arange(N)[:, None]
    if k <= 1:
        return own
    return np.hstack([own, index.self_neighbors(min(k - 1, N - 1))])


def mll_k_objective(X, y, hp: Hyperparams, kind, k: int, index: NeighborIndex, batch_idx=None, return_grad=False):
    """Average joint log marginal likelihood of each point's k-point neighborhood."""
    X, y = _check_xy(X, y)
    N = X.shape[0]
    if not 1 <= k <= N:
        raise ValueError(f"k={k} must satisfy 1 <= k <= N={N}")
    sets = mll_k_sets(index, k)
    idx = np.arange(N) if batch_idx is None else np.asarray(batch_idx, dtype=np.int64)
    S = sets[idx]
    jb = JointMLLBatch(X[S], y[S] - hp.mean_const, np.full(S.shape, hp.noise_var), hp, kind)
    value = float(np.mean(jb.value))
    if not return_grad:
        return value
    g_ls, g_sk, g_resid, g_noise = jb.vjp(np.full(len(idx), 1.0 / len(idx)))
    return value, np.r_[g_ls, g_sk, 2.0 * hp.noise_var * np.sum(g_noise), -np.sum(g_resid)]


def train_baseline(objective, X, y, hp0: Hyperparams, kind=KernelKind.MATERN52, cfg: TrainConfig | None = None):
    """Train with a marginal-likelihood-type objective and the shared Adam loop.

    Exact MLL is full batch (``N <= 4096``); MLL-k and Vecchia use mini-batches
    and refresh their neighbor sets every ``cfg.nn_refresh`` steps. Adam's
    ``beta1`` defaults to 0.5 here.
    """
    objective = Objective(objective)
    X, y = _check_xy(X, y)
    N = X.shape[0]
    kind = as_kind(kind)
    cfg = cfg or TrainConfig()
    beta1 = 0.5 if cfg.beta1 is None else cfg.beta1
    common = dict(n_steps=cfg.n_steps, lr=cfg.lr, beta1=beta1, beta2=cfg.beta2, eps=cfg.eps, seed=cfg.seed)

    if objective is Objective.EXACT_MLL:
        cfg.validate(None)
        if N > EXACT_MLL_MAX_N:
            raise ValueError(f"exact MLL training is limited to N <= {EXACT_MLL_MAX_N} (got {N})")

        def f(theta, batch, rng):
            return exact_mll_and_grad(X, y, Hyperparams.from_vector(theta), kind)

        theta, trace = maximize(hp0.to_vector(), f, **common)
        return Hyperparams.from_vector(theta), trace

    cfg.validate(N, need_k_below_n=objective is Objective.VECCHIA)
    if objective is Objective.MLL_K and cfg.k > N:
        raise ValueError(f"k={cfg.k} must be at most N={N}")
    holder = {}
    ordering = pca_ordering(X) if objective is Objective.VECCHIA else None

    def rebuild(theta):
        if ordering is None:
            holder["index"] = build_index(X, theta[:-3], cfg.backend)
            mll_k_sets(holder["index"], cfg.k)
        else:
            holder["nbr"] = vecchia_neighbors(X, theta[:-3], cfg.k, ordering)

    def f(theta, batch, rng):
        hp = Hyperparams.from_vector(theta)
        if ordering is None:
            return mll_k_objective(X, y, hp, kind, cfg.k, holder["index"], batch, True)
        return vecchia_objective(X, y, hp, kind, cfg.k, ordering, holder["nbr"], batch, True)

    theta, trace = maximize(
        hp0.to_vector(),
        f,
        **common,
        n_points=N,
        batch_size=min(cfg.batch_size, N),
        rebuild=rebuild,
        refresh_every=cfg.nn_refresh,
    )
    return Hyperparams.from_vector(theta), trace
