"""Synthetic data generators, warps, normalization, splitting and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..kernels import Hyperparams, KernelKind, as_kind, kernel_matrix
from ..linalg import cholesky, jitter_for

GENERATOR_MAX_N = 16384
DEGENERATE_NOISE_VAR = 1e-4


@dataclass
class Dataset:
    """Inputs with regression targets (``task="regression"``) or integer class labels."""

    X: np.ndarray
    y: np.ndarray
    task: str = "regression"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y).ravel()
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task {self.task!r}")
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y must have the same number of rows")
        self.y = self.y.astype(float if self.task == "regression" else np.int64)

    def __len__(self):
        return self.X.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.task, dict(self.meta))


def sample_gp_dataset(N: int, D: int, hp: Hyperparams, kind=KernelKind.RBF, seed: int = 0) -> Dataset:
    """Draw ``X ~ U[-1, 1]^D`` and ``y = f(X) + noise`` with ``f`` from the zero-mean GP prior."""
    if N > GENERATOR_MAX_N:
        raise ValueError(f"N={N} exceeds the dense generator limit {GENERATOR_MAX_N}")
    if N < 1 or D < 1:
        raise ValueError("N and D must be positive")
    if hp.dim != D:
        raise ValueError(f"hyperparameters have dimension {hp.dim}, expected {D}")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(N, D))
    L, _ = cholesky(kernel_matrix(X, X, hp, as_kind(kind)), jitter_for(hp))
    f = L @ rng.standard_normal(N)
    y = f + hp.obs_noise * rng.standard_normal(N)
    return Dataset(X, y, meta={"generator": "gp", "seed": seed})


class WarpKind(str, Enum):
    NEG_STRETCH = "neg_stretch"
    POS_POWER = "pos_power"
    CUBIC = "cubic"


@dataclass(frozen=True)
class WarpSpec:
    kind: WarpKind
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "kind", WarpKind(self.kind))
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")


def apply_warp(X, w: WarpSpec) -> np.ndarray:
    """Coordinatewise input warp; ``gamma = 0`` is the identity for every kind."""
    X = np.asarray(X, dtype=float)
    g = w.gamma
    if w.kind is WarpKind.NEG_STRETCH:
        return np.where(X < 0, (1.0 + g) * X, X)
    if w.kind is WarpKind.POS_POWER:
        return np.where(X > 0, np.power(np.maximum(X, 0.0), 1.0 + g), X)
    return X + g * X**3


def degenerate_augment(ds: Dataset, seed: int = 0) -> Dataset:
    """Append a noisy replicate of every point (noise variance 1e-4 on inputs and targets)."""
    if ds.task != "regression":
        raise ValueError("degenerate_augment expects a regression dataset")
    rng = np.random.default_rng(seed)
    sd = math.sqrt(DEGENERATE_NOISE_VAR)
    Xr = ds.X + sd * rng.standard_normal(ds.X.shape)
    yr = ds.y + sd * rng.standard_normal(ds.y.shape)
    return Dataset(np.vstack([ds.X, Xr]), np.concatenate([ds.y, yr]), ds.task, dict(ds.meta, degenerate=True))


@dataclass
class Normalizer:
    """Affine maps fitted on a training split.

    Columns with zero variance are passed through unchanged and listed in
    ``constant_columns``.
    """

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    constant_columns: list

    @classmethod
    def fit(cls, ds: Dataset) -> "Normalizer":
        with np.errstate(over="ignore", invalid="ignore"):
            mu = ds.X.mean(axis=0)
            sd = ds.X.std(axis=0)
        const = sd == 0
        mu = np.where(const, 0.0, mu)
        sd = np.where(const, 1.0, sd)
        if ds.task == "regression":
            with np.errstate(over="ignore", invalid="ignore"):
                ym, ys = float(ds.y.mean()), float(ds.y.std())
            if ys == 0:
                ys = 1.0
        else:
            ym, ys = 0.0, 1.0
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sd)) and math.isfinite(ym) and math.isfinite(ys)):
            raise OverflowError("normalization statistics overflow; rescale the data")
        return cls(mu, sd, ym, ys, np.nonzero(const)[0].tolist())

    @property
    def flagged(self) -> bool:
        return bool(self.constant_columns)

    def transform(self, ds: Dataset) -> Dataset:
        X = (ds.X - self.x_mean) / self.x_scale
        y = (ds.y - self.y_mean) / self.y_scale if ds.task == "regression" else ds.y
        return Dataset(X, y, ds.task, dict(ds.meta))


def normalize(ds: Dataset):
    """Standardize inputs and (for regression) targets using this dataset's statistics.

    Returns the transformed dataset and the fitted :class:`Normalizer`.
    """
    t = Normalizer.fit(ds)
    return t.transform(ds), t


@dataclass(frozen=True)
class SplitSpec:
    train: float = 15.0
    test: float = 3.0
    validation: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.test, self.validation) < 0 or self.train <= 0:
            raise ValueError("split proportions must be nonnegative with a positive train share")


def split_indices(N: int, spec: SplitSpec = SplitSpec()):
    """Disjoint (train, test, validation) index arrays covering ``range(N)``."""
    perm = np.random.default_rng(spec.seed).permutation(N)
    total = spec.train + spec.test + spec.validation
    n_train = int(round(N * spec.train / total))
    n_test = int(round(N * spec.test / total))
    n_test = min(n_test, N - n_train)
    tr = np.sort(perm[:n_train])
    te = np.sort(perm[n_train : n_train + n_test])
    va = np.sort(perm[n_train + n_test :])
    return tr, te, va


def read_csv(path, task: str = "regression", require_target: bool = True) -> Dataset:
    """Read a header-row CSV with a ``y`` (regression) or ``label`` (classification) column.

    With ``require_target=False`` a file without the target column is accepted;
    its targets are then filled with NaN (regression) or -1 (classification)
    and ``meta["has_target"]`` is false.
    """
    target = "y" if task == "regression" else "label"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    has_target = target in header
    if not has_target and require_target:
        raise ValueError(f"{path}: missing target column {target!r}")
    try:
        data = np.array([[float(v) for v in r] for r in body], dtype=float).reshape(-1, len(header))
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric or ragged row ({exc})") from None
    if has_target:
        j = header.index(target)
        X, y = np.delete(data, j, axis=1), data[:, j]
    else:
        j, X = None, data
        y = np.full(len(data), np.nan if task == "regression" else -1.0)
    if task != "regression" and has_target and not np.all(y == np.round(y)):
        raise ValueError(f"{path}: labels must be integers")
    features = [h for i, h in enumerate(header) if i != j]
    return Dataset(X, y, task, {"source": str(path), "features": features, "has_target": has_target})


def write_csv(path, ds: Dataset):
    target = "y" if ds.task == "regression" else "label"
    names = ds.meta.get("features") or [f"x{i}" for i in range(ds.X.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(names) + [target])
        for x, t in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(t)) if ds.task == "regression" else int(t)])
