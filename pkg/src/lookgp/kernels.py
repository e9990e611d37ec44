"""Stationary kernels with per-dimension lengthscales.

All hyperparameters are stored in log space so that gradient ascent can run
unconstrained. The flat parameter vector used by the optimizers is laid out as
``[log_lengthscales (D), log_kernel_scale, log_obs_noise, mean_const]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial.distance import cdist

SQRT5 = math.sqrt(5.0)


class KernelKind(str, Enum):
    RBF = "rbf"
    MATERN52 = "matern52"


def as_kind(kind: KernelKind | str) -> KernelKind:
    try:
        return KernelKind(kind.lower() if isinstance(kind, str) else kind)
    except ValueError:
        raise ValueError(f"unknown kernel kind {kind!r}; expected 'rbf' or 'matern52'") from None


class HyperparameterRangeError(OverflowError, ValueError):
    """Hyperparameters outside the representable range (for example after a diverging step)."""


@dataclass
class Hyperparams:
    """Log-parameterized GP hyperparameters.

    Parameters
    ----------
    log_lengthscales : array of shape (D,)
    log_kernel_scale : float
        Log of the kernel scale (the kernel amplitude is its square).
    log_obs_noise : float
        Log of the observation noise standard deviation.
    mean_const : float
        Constant prior mean. Classification keeps this at zero.
    """

    log_lengthscales: np.ndarray
    log_kernel_scale: float = 0.0
    log_obs_noise: float = math.log(0.5)
    mean_const: float = 0.0

    def __post_init__(self):
        self.log_lengthscales = np.atleast_1d(np.asarray(self.log_lengthscales, dtype=float)).copy()
        if self.log_lengthscales.ndim != 1:
            raise ValueError("log_lengthscales must be a vector")
        self.log_kernel_scale = float(self.log_kernel_scale)
        self.log_obs_noise = float(self.log_obs_noise)
        self.mean_const = float(self.mean_const)
        with np.errstate(over="ignore"):
            vals = np.exp(np.r_[self.log_lengthscales, self.log_kernel_scale, self.log_obs_noise])
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0) or not math.isfinite(self.mean_const):
            raise HyperparameterRangeError("hyperparameters must exponentiate to finite positive values")

    @classmethod
    def default(cls, D: int, y=None) -> "Hyperparams":
        mean = float(np.mean(y)) if y is not None and len(y) else 0.0
        return cls(np.zeros(D), 0.0, math.log(0.5), mean)

    @property
    def dim(self) -> int:
        return self.log_lengthscales.shape[0]

    @property
    def lengthscales(self) -> np.ndarray:
        return np.exp(self.log_lengthscales)

    @property
    def kernel_scale(self) -> float:
        return math.exp(self.log_kernel_scale)

    @property
    def obs_noise(self) -> float:
        return math.exp(self.log_obs_noise)

    @property
    def kernel_var(self) -> float:
        return math.exp(2.0 * self.log_kernel_scale)

    @property
    def noise_var(self) -> float:
        return math.exp(2.0 * self.log_obs_noise)

    def to_vector(self) -> np.ndarray:
        return np.r_[self.log_lengthscales, self.log_kernel_scale, self.log_obs_noise, self.mean_const]

    @classmethod
    def from_vector(cls, theta) -> "Hyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:-3], theta[-3], theta[-2], theta[-1])

    def to_dict(self) -> dict:
        return {
            "log_lengthscales": [float(v) for v in self.log_lengthscales],
            "log_kernel_scale": self.log_kernel_scale,
            "log_obs_noise": self.log_obs_noise,
            "mean_const": self.mean_const,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(
            np.asarray(d["log_lengthscales"], dtype=float),
            d["log_kernel_scale"],
            d["log_obs_noise"],
            d.get("mean_const", 0.0),
        )

    def copy(self) -> "Hyperparams":
        return Hyperparams.from_vector(self.to_vector())


def _check_dims(D1: int, D2: int, hp: Hyperparams):
    if D1 != D2 or D1 != hp.dim:
        raise ValueError(f"dimension mismatch: inputs have D={D1} and D={D2}, hyperparameters D={hp.dim}")


def profile(d2, kind: KernelKind | str):
    """Unit-amplitude kernel as a function of the squared scaled distance."""
    kind = as_kind(kind)
    d2 = np.maximum(d2, 0.0)
    if kind is KernelKind.RBF:
        return np.exp(-0.5 * d2)
    d = np.sqrt(d2)
    return (1.0 + SQRT5 * d + (5.0 / 3.0) * d2) * np.exp(-SQRT5 * d)


def lengthscale_factor(d2, kind: KernelKind | str):
    """Factor ``P`` with ``dK/dlog(rho_i) = sigma_K^2 * P * (x_i - z_i)^2 / rho_i^2``."""
    kind = as_kind(kind)
    d2 = np.maximum(d2, 0.0)
    if kind is KernelKind.RBF:
        return np.exp(-0.5 * d2)
    d = np.sqrt(d2)
    return (5.0 / 3.0) * (1.0 + SQRT5 * d) * np.exp(-SQRT5 * d)


def scaled_distance(x, z, hp: Hyperparams) -> float:
    x = np.asarray(x, dtype=float).ravel()
    z = np.asarray(z, dtype=float).ravel()
    _check_dims(x.shape[0], z.shape[0], hp)
    u = (x - z) / hp.lengthscales
    return float(np.sqrt(np.sum(u * u)))


def kernel_eval(x, z, hp: Hyperparams, kind: KernelKind | str = KernelKind.RBF) -> float:
    d = scaled_distance(x, z, hp)
    return float(hp.kernel_var * profile(d * d, kind))


def scaled_sqdist(U1, U2):
    """Pairwise squared distances between already-scaled point sets.

    Works on stacked inputs: ``U1`` of shape (..., n1, D) and ``U2`` of shape
    (..., n2, D). Differences are formed coordinate by coordinate so identical
    points give exactly zero.
    """
    if U1.ndim == 2 and U2.ndim == 2:
        return cdist(U1, U2, "sqeuclidean")
    out = np.zeros(U1.shape[:-1] + (U2.shape[-2],))
    for i in range(U1.shape[-1]):
        diff = U1[..., :, None, i] - U2[..., None, :, i]
        out += diff * diff
    return out


def kernel_matrix(X1, X2, hp: Hyperparams, kind: KernelKind | str = KernelKind.RBF) -> np.ndarray:
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    _check_dims(X1.shape[1], X2.shape[1], hp)
    ls = hp.lengthscales
    d2 = scaled_sqdist(X1 / ls, X2 / ls)
    return hp.kernel_var * profile(d2, kind)


def kernel_grads(X1, X2, hp: Hyperparams, kind: KernelKind | str = KernelKind.RBF) -> dict:
    """Gradients of :func:`kernel_matrix` with respect to the log-hyperparameters.

    Returns
    -------
    dict
        ``"log_lengthscales"`` maps to an array of shape (D, N1, N2) and
        ``"log_kernel_scale"`` to an array of shape (N1, N2).
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    _check_dims(X1.shape[1], X2.shape[1], hp)
    ls = hp.lengthscales
    U1, U2 = X1 / ls, X2 / ls
    d2 = scaled_sqdist(U1, U2)
    K = hp.kernel_var * profile(d2, kind)
    P = hp.kernel_var * lengthscale_factor(d2, kind)
    dls = np.stack([P * (U1[:, None, i] - U2[None, :, i]) ** 2 for i in range(hp.dim)])
    return {"log_lengthscales": dls, "log_kernel_scale": 2.0 * K}
