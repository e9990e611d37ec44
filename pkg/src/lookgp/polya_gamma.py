"""Pòlya-Gamma PG(1, 0) density, log-Normal variational family and Gauss-Hermite rules."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import expit, log_expit, logsumexp

PG_SUPPORT_MAX = 2.5
OMEGA_MIN = 1e-6
DEFAULT_TERMS = 7
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _series(omega, terms):
    """Alternating series with the leading exponential factored out.

    Returns ``S`` and ``dS/domega`` where
    ``p(omega) = exp(-1/(8 omega)) * omega^{-3/2} / sqrt(2 pi) * S``.
    """
    n = np.arange(terms)
    a = (-1.0) ** n * (2 * n + 1)
    c = ((2 * n + 1) ** 2 - 1) / 8.0
    om = np.asarray(omega, dtype=float)[..., None]
    e = a * np.exp(-c / om)
    return e.sum(-1), (e * c / (om * om)).sum(-1)


def pg_log_density(omega, terms: int = DEFAULT_TERMS):
    """Log density of PG(1, 0) from the first ``terms`` terms of its alternating series.

    Defined on ``(0, 2.5]``; values outside raise ``ValueError``.
    """
    om = np.asarray(omega, dtype=float)
    if np.any(~(om > 0)) or np.any(om > PG_SUPPORT_MAX):
        raise ValueError(f"omega must lie in (0, {PG_SUPPORT_MAX}]")
    S, _ = _series(om, terms)
    if np.any(S <= 0):
        raise ArithmeticError("non-positive partial sum; increase the number of series terms")
    out = -_HALF_LOG_2PI - 1.5 * np.log(om) - 0.125 / om + np.log(S)
    return out if out.ndim else float(out)


def pg_density(omega, terms: int = DEFAULT_TERMS):
    return np.exp(pg_log_density(omega, terms))


def _pg_log_density_and_dlog(om, terms=DEFAULT_TERMS):
    S, dS = _series(om, terms)
    logp = -_HALF_LOG_2PI - 1.5 * np.log(om) - 0.125 / om + np.log(S)
    dlogp = -1.5 / om + 0.125 / (om * om) + dS / S
    return logp, dlogp


@dataclass(frozen=True)
class GHRule:
    """Gauss-Hermite rule for integrals against ``exp(-t^2)``."""

    nodes: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.shape[0]


@lru_cache(maxsize=None)
def _gauss_hermite_cached(Q):
    # Golub-Welsch: eigen-decomposition of the Jacobi matrix of the Hermite recurrence
    off = np.sqrt(np.arange(1, Q) / 2.0)
    nodes, vecs = eigh_tridiagonal(np.zeros(Q), off)
    weights = math.sqrt(math.pi) * vecs[0] ** 2
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GHRule(nodes, weights)


def gauss_hermite(Q: int = 16) -> GHRule:
    if Q < 1:
        raise ValueError("Q must be positive")
    return _gauss_hermite_cached(int(Q))


@dataclass
class PGVariational:
    """Mean-field log-Normal q(omega): ``log omega ~ N(m, s^2)`` per site."""

    m: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.m = np.array(self.m, dtype=float)
        self.s = np.array(self.s, dtype=float)
        if self.m.shape != self.s.shape:
            raise ValueError("m and s must have the same shape")
        if np.any(~(self.s > 0)):
            raise ValueError("scales s must be positive")

    @classmethod
    def init(cls, shape, m0: float = math.log(0.25), s0: float = 0.1) -> "PGVariational":
        return cls(np.full(shape, m0), np.full(shape, s0))

    @property
    def n_sites(self) -> int:
        return self.m.size

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "s": self.s.tolist()}

    @classmethod
    def from_dict(cls, d) -> "PGVariational":
        return cls(np.asarray(d["m"], dtype=float), np.asarray(d["s"], dtype=float))


def q_sample(q: PGVariational, noise):
    """Reparameterized draw ``exp(m + s * noise)`` clamped to ``(1e-6, 2.5)``."""
    noise = np.asarray(noise, dtype=float)
    if noise.shape != q.m.shape:
        raise ValueError(f"noise shape {noise.shape} does not match q shape {q.m.shape}")
    return np.clip(np.exp(q.m + q.s * noise), OMEGA_MIN, PG_SUPPORT_MAX)


def q_sample_and_jac(m, s, noise):
    """Clamped sample with its derivatives in ``m`` and ``log s`` (zero where clamped)."""
    raw = np.exp(m + s * noise)
    omega = np.clip(raw, OMEGA_MIN, PG_SUPPORT_MAX)
    inside = (raw > OMEGA_MIN) & (raw < PG_SUPPORT_MAX)
    d_m = np.where(inside, raw, 0.0)
    return omega, d_m, d_m * s * noise


def kl_sites(m, s, gh: GHRule, grad: bool = False):
    """Per-site KL(q || PG(1,0)), optionally with gradients in ``m`` and ``log s``.

    The cross-entropy term is integrated by Gauss-Hermite quadrature over the
    reparameterization noise; the log-Normal entropy is closed form.
    """
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    t = math.sqrt(2.0) * gh.nodes
    w = gh.weights / math.sqrt(math.pi)
    eps = np.broadcast_to(t, m.shape + t.shape)
    omega, d_m, d_ls = q_sample_and_jac(m[..., None], s[..., None], eps)
    logp, dlogp = _pg_log_density_and_dlog(omega)
    cross = logp @ w
    entropy = m + 0.5 * np.log(2.0 * math.pi * math.e * s * s)
    kl = -entropy - cross
    if not grad:
        return kl
    g_m = -1.0 - (dlogp * d_m) @ w
    g_ls = -1.0 - (dlogp * d_ls) @ w
    return kl, g_m, g_ls


def kl_q_p(q: PGVariational, gh: GHRule | None = None) -> float:
    """Total KL divergence from q to the PG(1, 0) prior over all sites."""
    gh = gh or gauss_hermite(16)
    return float(np.sum(kl_sites(q.m, q.s, gh)))


def gh_expect_sigmoid(y, mu, var, gh: GHRule | None = None):
    """``E[sigmoid(y f)]`` for ``f ~ N(mu, var)`` by Gauss-Hermite quadrature."""
    gh = gh or gauss_hermite(16)
    y, mu, var = np.broadcast_arrays(np.asarray(y, float), np.asarray(mu, float), np.asarray(var, float))
    if np.any(var <= 0):
        raise ValueError("var must be positive")
    f = mu[..., None] + np.sqrt(2.0 * var)[..., None] * gh.nodes
    out = expit(y[..., None] * f) @ gh.weights / math.sqrt(math.pi)
    return out if out.ndim else float(out)


def gh_log_expect_sigmoid(y, mu, var, gh: GHRule, grad: bool = False):
    """``log E[sigmoid(y f)]`` computed in log space, with optional gradients in ``mu`` and ``var``."""
    sd = np.sqrt(2.0 * var)
    z = y[..., None] * (mu[..., None] + sd[..., None] * gh.nodes)
    logw = np.log(gh.weights / math.sqrt(math.pi))
    terms = logw + log_expit(z)
    logP = logsumexp(terms, axis=-1)
    if not grad:
        return logP
    r = np.exp(terms - logP[..., None]) * expit(-z)
    g_mu = y * r.sum(-1)
    g_var = y * (r * gh.nodes).sum(-1) / sd
    return logP, g_mu, g_var
