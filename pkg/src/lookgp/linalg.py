"""Dense GP computations: Cholesky solves, predictive moments and marginal likelihoods.

Everything here is written for stacks of small systems (shape ``(B, k, k)``)
so that a mini-batch of nearest-neighbor conditionals is a single call. The
exact (untruncated) quantities are the ``B = 1`` special case.

Jitter policy: a nugget of ``1e-6 * sigma_K^2`` is added to every kernel
diagonal, including the prior variance at the query point, so that chained
conditionals and the joint likelihood describe the same model. If the
factorization fails the nugget is raised tenfold once, then
:class:`FactorizationError` is raised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .kernels import Hyperparams, KernelKind, as_kind, lengthscale_factor, profile, scaled_sqdist

JITTER = 1e-6
LOG_2PI = math.log(2.0 * math.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Cholesky factorization failed even after jitter escalation."""


@dataclass
class GaussianPredictive:
    """Predictive moments; fields are floats for one point or arrays for many."""

    mean: np.ndarray | float
    var_latent: np.ndarray | float
    var_observed: np.ndarray | float

    def __len__(self):
        return int(np.size(self.mean))

    def __getitem__(self, i) -> "GaussianPredictive":
        return GaussianPredictive(
            float(np.ravel(self.mean)[i]),
            float(np.ravel(self.var_latent)[i]),
            float(np.ravel(self.var_observed)[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def std(self, observed: bool = True):
        return np.sqrt(self.var_observed if observed else self.var_latent)


def jitter_for(hp: Hyperparams) -> float:
    return JITTER * hp.kernel_var


def cholesky(A, jitter: float = 0.0):
    """Lower Cholesky factor of (a stack of) ``A + jitter * I``.

    Returns the factor and the jitter actually used.
    """
    A = np.asarray(A, dtype=float)
    eye = np.eye(A.shape[-1])
    for j in (jitter, 10.0 * jitter):
        try:
            L = np.linalg.cholesky(A + j * eye)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return L, j
    raise FactorizationError(
        f"Cholesky factorization failed (jitter escalated to {10.0 * jitter:.3g}); matrix is not positive definite"
    )


def _tri_solve(L, B, trans=False):
    if L.ndim == 2:
        return scipy.linalg.solve_triangular(L, B, lower=True, trans=1 if trans else 0, check_finite=False)
    if trans:
        L = np.swapaxes(L, -1, -2)
    return np.linalg.solve(L, B)


def cho_solve_factor(L, B):
    return _tri_solve(L, _tri_solve(L, B), trans=True)


def chol_solve(A, B, jitter: float = 0.0):
    """Solve ``A X = B`` for symmetric positive definite ``A``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: A {A.shape}, B {B.shape}")
    L, _ = cholesky(A, jitter)
    return cho_solve_factor(L, B)


def _spd_inverse(L):
    if L.ndim == 2:
        inv, info = scipy.linalg.lapack.dpotri(L, lower=1)
        if info != 0:
            raise FactorizationError("inverse from Cholesky factor failed")
        # the factor's upper triangle is zero and dpotri only writes the lower one
        out = inv + inv.T
        out[np.diag_indices_from(out)] *= 0.5
        return out
    Linv = np.linalg.solve(L, np.broadcast_to(np.eye(L.shape[-1]), L.shape))
    return np.swapaxes(Linv, -1, -2) @ Linv


def _lengthscale_contraction(W, U1, U2):
    """``sum_{jl} W[..., j, l] * (U1[..., j, i] - U2[..., l, i])**2`` summed over the batch, per dim ``i``."""
    # expands (a_j - b_l)^2 so each dimension costs matrix-vector products only
    D = U1.shape[-1]
    n1, n2 = W.shape[-2:]
    batch = W.shape[:-2]
    W = W.reshape(-1, n1, n2)
    U1 = np.broadcast_to(U1, batch + (n1, D)).reshape(-1, n1, D)
    U2 = np.broadcast_to(U2, batch + (n2, D)).reshape(-1, n2, D)
    return (
        np.einsum("bji,bj->i", U1 * U1, W.sum(axis=2))
        + np.einsum("bli,bl->i", U2 * U2, W.sum(axis=1))
        - 2.0 * np.einsum("bji,bji->i", U1, W @ U2)
    )

class ConditionalBatch:
    """Posterior moments of the latent function at B query points.

    Query ``b`` conditions on its own set of ``k`` points with (centered)
    targets ``targets[b]`` and per-point noise variances ``noise[b]``.

    Parameters
    ----------
    Xq : array (B, D)
    Xnb : array (B, k, D)
    targets : array (B, k)
    noise : array (B, k)
    """

    def __init__(self, Xq, Xnb, targets, noise, hp: Hyperparams, kind: KernelKind | str):
        self.hp = hp
        self.kind = as_kind(kind)
        ls = hp.lengthscales
        self.Uq = np.asarray(Xq, dtype=float) / ls
        self.Unb = np.asarray(Xnb, dtype=float) / ls
        B, k = self.Unb.shape[:2]
        self.B, self.k = B, k
        s2 = hp.kernel_var
        self.jitter = jitter_for(hp)
        if k == 0:
            self.mean = np.zeros(B)
            self.kqq = s2 + self.jitter
            self.var = np.full(B, self.kqq)
            return
        self.d2_ss = scaled_sqdist(self.Unb, self.Unb)
        self.d2_sq = scaled_sqdist(self.Unb, self.Uq[:, None, :])[..., 0]
        self.Kss = s2 * profile(self.d2_ss, self.kind)
        self.Ksq = s2 * profile(self.d2_sq, self.kind)
        A = self.Kss.copy()
        idx = np.arange(k)
        A[:, idx, idx] += np.asarray(noise, dtype=float)
        L, self.jitter = cholesky(A, self.jitter)
        rhs = np.stack([np.asarray(targets, dtype=float), self.Ksq], axis=-1)
        sol = cho_solve_factor(L, rhs)
        self.alpha, self.beta = sol[..., 0], sol[..., 1]
        self.kqq = s2 + self.jitter
        self.mean = np.einsum("bj,bj->b", self.Ksq, self.alpha)
        self.var = self.kqq - np.einsum("bj,bj->b", self.Ksq, self.beta)

    def vjp(self, g_mean, g_var):
        """Pull back gradients of ``mean`` and ``var``.

        Returns
        -------
        g_log_ls : array (D,)
        g_log_scale : float
        g_targets : array (B, k)
        g_noise : array (B, k)
        """
        g_mean = np.asarray(g_mean, dtype=float)
        g_var = np.asarray(g_var, dtype=float)
        D = self.hp.dim
        if self.k == 0:
            return np.zeros(D), float(2.0 * np.sum(g_var) * self.kqq), np.zeros((self.B, 0)), np.zeros((self.B, 0))
        a, b = self.alpha, self.beta
        GA = (-g_mean[:, None, None] * b[:, :, None] * a[:, None, :]) + g_var[:, None, None] * b[:, :, None] * b[:, None, :]
        gb = g_mean[:, None] * a - 2.0 * g_var[:, None] * b
        g_targets = g_mean[:, None] * b
        g_noise = np.diagonal(GA, axis1=1, axis2=2).copy()
        g_log_scale = 2.0 * (
            np.sum(GA * self.Kss) + self.jitter * np.sum(g_noise) + np.sum(gb * self.Ksq) + np.sum(g_var) * self.kqq
        )
        s2 = self.hp.kernel_var
        Wss = GA * (s2 * lengthscale_factor(self.d2_ss, self.kind))
        Wsq = gb * (s2 * lengthscale_factor(self.d2_sq, self.kind))
        g_log_ls = _lengthscale_contraction(Wss, self.Unb, self.Unb)
        g_log_ls += _lengthscale_contraction(Wsq[..., None], self.Unb, self.Uq[:, None, :])
        return g_log_ls, float(g_log_scale), g_targets, g_noise


class JointMLLBatch:
    """Multivariate normal log densities of B target blocks under the GP.

    Parameters
    ----------
    Xs : array (B, n, D)
    resid : array (B, n)
        Targets minus the prior mean.
    noise : array (B, n)
    """

    def __init__(self, Xs, resid, noise, hp: Hyperparams, kind: KernelKind | str):
        self.hp = hp
        self.kind = as_kind(kind)
        self.U = np.asarray(Xs, dtype=float) / hp.lengthscales
        B, n = self.U.shape[:2]
        s2 = hp.kernel_var
        self.d2 = scaled_sqdist(self.U, self.U)
        self.K = s2 * profile(self.d2, self.kind)
        A = self.K.copy()
        idx = np.arange(n)
        A[:, idx, idx] += np.asarray(noise, dtype=float)
        if B == 1:
            L, self.jitter = cholesky(A[0], jitter_for(hp))
            L = L[None]
        else:
            L, self.jitter = cholesky(A, jitter_for(hp))
        self.L = L
        resid = np.asarray(resid, dtype=float)
        if B == 1:
            self.alpha = cho_solve_factor(L[0], resid[0])[None]
        else:
            self.alpha = cho_solve_factor(L, resid[..., None])[..., 0]
        logdet = 2.0 * np.sum(np.log(np.diagonal(L, axis1=1, axis2=2)), axis=1)
        self.value = -0.5 * np.einsum("bj,bj->b", resid, self.alpha) - 0.5 * logdet - 0.5 * n * LOG_2PI

    def vjp(self, g):
        """Pull back per-block weights ``g``; returns (g_log_ls, g_log_scale, g_resid, g_noise)."""
        g = np.asarray(g, dtype=float)
        Ainv = _spd_inverse(self.L[0])[None] if self.L.shape[0] == 1 else _spd_inverse(self.L)
        a = self.alpha
        GA = 0.5 * g[:, None, None] * (a[:, :, None] * a[:, None, :] - Ainv)
        g_noise = np.diagonal(GA, axis1=1, axis2=2).copy()
        g_log_scale = 2.0 * (np.sum(GA * self.K) + self.jitter * np.sum(g_noise))
        W = GA * (self.hp.kernel_var * lengthscale_factor(self.d2, self.kind))
        g_log_ls = _lengthscale_contraction(W, self.U, self.U)
        g_resid = -g[:, None] * a
        return g_log_ls, float(g_log_scale), g_resid, g_noise


def predictive(
    x_star,
    X,
    y,
    noise_diag,
    hp: Hyperparams,
    kind: KernelKind | str = KernelKind.RBF,
    noise_star: float | None = None,
) -> GaussianPredictive:
    """GP predictive at one point given ``n >= 0`` observations with per-point noise.

    Targets are centered by ``hp.mean_const`` and the mean re-shifted.
    ``noise_star`` is the observation noise variance at the query point and
    defaults to ``hp.noise_var``.
    """
    x_star = np.asarray(x_star, dtype=float).ravel()
    X = np.asarray(X, dtype=float).reshape(-1, x_star.shape[0]) if np.size(X) else np.zeros((0, x_star.shape[0]))
    y = np.asarray(y, dtype=float).ravel()
    noise_diag = np.asarray(noise_diag, dtype=float).ravel()
    if x_star.shape[0] != hp.dim or X.shape[0] != y.shape[0] or noise_diag.shape[0] != y.shape[0]:
        raise ValueError("dimension mismatch in predictive inputs")
    if np.any(noise_diag <= 0):
        raise ValueError("noise_diag entries must be positive")
    cb = ConditionalBatch(x_star[None], X[None], (y - hp.mean_const)[None], noise_diag[None], hp, kind)
    noise_star = hp.noise_var if noise_star is None else float(noise_star)
    var = float(cb.var[0])
    return GaussianPredictive(hp.mean_const + float(cb.mean[0]), var, var + noise_star)


def exact_mll(X, y, hp: Hyperparams, kind: KernelKind | str = KernelKind.RBF) -> float:
    """Log marginal likelihood of all targets under the GP."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.shape[0] or X.shape[0] < 1:
        raise ValueError("X and y must have the same positive number of rows")
    if X.shape[1] != hp.dim:
        raise ValueError("dimension mismatch between X and hyperparameters")
    jb = JointMLLBatch(X[None], (y - hp.mean_const)[None], np.full((1, len(y)), hp.noise_var), hp, kind)
    return float(jb.value[0])


def exact_mll_and_grad(X, y, hp: Hyperparams, kind: KernelKind | str = KernelKind.RBF):
    """Exact MLL and its gradient in the flat log-hyperparameter layout."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    jb = JointMLLBatch(X[None], (y - hp.mean_const)[None], np.full((1, len(y)), hp.noise_var), hp, kind)
    g_ls, g_sk, g_resid, g_noise = jb.vjp(np.ones(1))
    grad = np.r_[g_ls, g_sk, 2.0 * hp.noise_var * np.sum(g_noise), -np.sum(g_resid)]
    return float(jb.value[0]), grad


def dense_predict(X, y, hp: Hyperparams, kind: KernelKind | str, X_test) -> GaussianPredictive:
    """Full-data GP predictive at many test points with one factorization."""
    kind = as_kind(kind)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X_test = np.atleast_2d(np.asarray(X_test, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[1] != hp.dim or X_test.shape[1] != hp.dim:
        raise ValueError("dimension mismatch between inputs and hyperparameters")
    U, Ut = X / hp.lengthscales, X_test / hp.lengthscales
    jit = jitter_for(hp)
    K = hp.kernel_var * profile(scaled_sqdist(U, U), kind)
    L, used = cholesky(K + hp.noise_var * np.eye(len(y)), jit)
    Ks = hp.kernel_var * profile(scaled_sqdist(U, Ut), kind)
    alpha = cho_solve_factor(L, y - hp.mean_const)
    V = _tri_solve(L, Ks)
    var = np.maximum(hp.kernel_var + used - np.sum(V * V, axis=0), 0.0)
    return GaussianPredictive(hp.mean_const + Ks.T @ alpha, var, var + hp.noise_var)
