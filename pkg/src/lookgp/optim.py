"""Adam ascent with a stepwise learning-rate schedule and periodic index refresh."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .kernels import HyperparameterRangeError
from .linalg import FactorizationError


class TrainingError(RuntimeError):
    """A numeric failure during training, tagged with the (1-based) step."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


def lr_schedule(t: int, n_steps: int, lr0: float) -> float:
    """Learning rate at 1-based step ``t``: divided by 5 after 25%, 50% and 75% of the run."""
    frac = t / n_steps
    if frac < 0.25:
        return lr0
    if frac < 0.5:
        return lr0 / 5.0
    if frac < 0.75:
        return lr0 / 25.0
    return lr0 / 125.0


class Adam:
    """Adam for maximization."""

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, theta, grad, lr: float):
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return theta + lr * m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class TrainTrace:
    """Per-step record of a training run.

    ``rebuild_steps`` are 1-based step numbers at which the neighbor index was
    rebuilt; ``step_seconds`` excludes rebuild time, which is kept in
    ``rebuild_seconds``.
    """

    objective: list = field(default_factory=list)
    params: list = field(default_factory=list)
    rebuild_steps: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)
    rebuild_seconds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "objective": [float(v) for v in self.objective],
            "params": [[float(x) for x in p] for p in self.params],
            "rebuild_steps": [int(s) for s in self.rebuild_steps],
            "step_seconds": [float(v) for v in self.step_seconds],
            "rebuild_seconds": [float(v) for v in self.rebuild_seconds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainTrace":
        return cls(
            list(d.get("objective", [])),
            [np.asarray(p) for p in d.get("params", [])],
            list(d.get("rebuild_steps", [])),
            list(d.get("step_seconds", [])),
            list(d.get("rebuild_seconds", [])),
        )

    @property
    def nn_seconds(self) -> float:
        return float(np.sum(self.rebuild_seconds))

    @property
    def train_seconds(self) -> float:
        return float(np.sum(self.step_seconds) + np.sum(self.rebuild_seconds))


def maximize(
    theta0,
    objective,
    *,
    n_steps: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    seed: int = 0,
    n_points: int | None = None,
    batch_size: int | None = None,
    rebuild=None,
    refresh_every: int = 50,
):
    """Run Adam ascent on ``objective(theta, batch_idx, rng) -> (value, grad)``.

    When ``batch_size`` is given a fresh mini-batch of that many distinct
    indices in ``[0, n_points)`` is drawn every step; otherwise ``batch_idx``
    is ``None``. ``rebuild(theta)`` is called before step ``t`` whenever
    ``(t - 1) % refresh_every == 0``.
    """
    theta = np.array(theta0, dtype=float)
    trace = TrainTrace()
    rng = np.random.default_rng(seed)
    opt = Adam(theta.size, beta1, beta2, eps)
    for t in range(1, n_steps + 1):
        if rebuild is not None and (t - 1) % refresh_every == 0:
            t0 = time.perf_counter()
            rebuild(theta)
            trace.rebuild_steps.append(t)
            trace.rebuild_seconds.append(time.perf_counter() - t0)
        t0 = time.perf_counter()
        batch = None
        if batch_size is not None:
            if batch_size >= n_points:
                batch = np.arange(n_points)
            else:
                batch = np.sort(rng.choice(n_points, size=batch_size, replace=False))
        try:
            value, grad = objective(theta, batch, rng)
        except (FactorizationError, HyperparameterRangeError) as exc:
            raise TrainingError(str(exc), t) from exc
        if not np.all(np.isfinite(grad)) or not np.isfinite(value):
            raise TrainingError("non-finite objective or gradient", t)
        theta = opt.step(theta, grad, lr_schedule(t, n_steps, lr))
        trace.step_seconds.append(time.perf_counter() - t0)
        trace.objective.append(float(value))
        trace.params.append(theta.copy())
    return theta, trace
