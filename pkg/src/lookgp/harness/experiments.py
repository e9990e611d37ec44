"""Experiment orchestration: generate or load data, split, normalize, train, evaluate, record.

Config (JSON)::

    {
      "experiment": "misspec" | "ksweep" | "runtime" | "degenerate" | "custom",
      "seeds": [0, 1, 2],
      "methods": ["loo_k", "mll", {"name": "vecchia", "train_config": {"n_steps": 500}}],
      "k_values": [32],
      "train_config": {...},           # TrainConfig fields shared by all methods
      "data": {...},                   # experiment specific, see the runners below
      "output_dir": "results/misspec",
      "kernel": "matern52",            # optional, model kernel
      "plots": true                    # optional, write SVG line plots
    }

Every run is seeded by its seed alone, so reruns reproduce the results CSV
byte for byte apart from the timing columns.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..baselines import train_baseline
from ..classification import ClassDataset, classifier_index, multiclass_predict, predict_binary, train_classifier
from ..kernels import Hyperparams, as_kind
from ..linalg import dense_predict
from ..neighbors import build_index
from ..optim import TrainingError
from ..regression import TrainConfig, default_hyperparams, predict, train
from .data import (
    Dataset,
    SplitSpec,
    WarpSpec,
    apply_warp,
    degenerate_augment,
    normalize,
    read_csv,
    sample_gp_dataset,
    split_indices,
)
from .metrics import MetricsReport, evaluate_classification, evaluate_regression

EXPERIMENTS = ("misspec", "ksweep", "runtime", "degenerate", "custom")
REGRESSION_METHODS = ("loo_k", "mll", "mll_k", "vecchia")
CONFIG_KEYS = {"experiment", "seeds", "methods", "k_values", "train_config", "data", "output_dir", "kernel", "plots"}
COLUMNS = [
    "method",
    "seed",
    "k",
    "warp",
    "gamma",
    "N",
    "variant",
    "nll",
    "rmse",
    "crps",
    "error",
    "lengthscale_gm",
    "obs_noise",
    "train_seconds",
    "nn_seconds",
    "step_seconds",
]
TIMING_COLUMNS = ("train_seconds", "nn_seconds", "step_seconds")
METRIC_COLUMNS = ("nll", "rmse", "crps", "error", "lengthscale_gm", "obs_noise")


class ConfigError(ValueError):
    pass


@dataclass
class MethodSpec:
    name: str
    train_config: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, item) -> "MethodSpec":
        if isinstance(item, str):
            return cls(item)
        if isinstance(item, dict) and "name" in item and set(item) <= {"name", "train_config"}:
            return cls(item["name"], dict(item.get("train_config", {})))
        raise ConfigError(f"invalid method entry {item!r}")

    @property
    def uses_k(self) -> bool:
        return self.name != "mll"


@dataclass
class ExperimentConfig:
    experiment: str
    seeds: list
    methods: list
    k_values: list
    train_config: dict
    data: dict
    output_dir: str
    kernel: str = "matern52"
    plots: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        missing = {"experiment", "seeds", "methods", "output_dir"} - set(d)
        if missing:
            raise ConfigError(f"missing config keys: {sorted(missing)}")
        if d["experiment"] not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {d['experiment']!r}")
        seeds = d["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        k_values = d.get("k_values", [32])
        if not isinstance(k_values, list) or not k_values or not all(isinstance(k, int) and k >= 1 for k in k_values):
            raise ConfigError("k_values must be a non-empty list of positive integers")
        methods = [MethodSpec.parse(m) for m in d["methods"]]
        if not methods:
            raise ConfigError("methods must be non-empty")
        cfg = cls(
            d["experiment"],
            list(seeds),
            methods,
            list(k_values),
            dict(d.get("train_config", {})),
            dict(d.get("data", {})),
            str(d["output_dir"]),
            d.get("kernel", "matern52"),
            bool(d.get("plots", False)),
        )
        try:
            as_kind(cfg.kernel)
            for m in methods:
                TrainConfig.from_dict({**cfg.train_config, **m.train_config}).validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            cfg = cls.from_dict(json.load(fh))
        base = os.path.dirname(os.path.abspath(path))
        if not os.path.isabs(cfg.output_dir):
            cfg.output_dir = os.path.join(base, cfg.output_dir)
        if "csv" in cfg.data and not os.path.isabs(cfg.data["csv"]):
            cfg.data["csv"] = os.path.join(base, cfg.data["csv"])
        return cfg

    def train_config_for(self, method: MethodSpec, k: int, seed: int, n_train: int) -> TrainConfig:
        tc = TrainConfig.from_dict({**self.train_config, **method.train_config})
        tc.k = k
        tc.seed = seed
        tc.batch_size = min(tc.batch_size, n_train)
        return tc


@dataclass
class FitResult:
    method: str
    k: int | None
    report: MetricsReport
    val_ll: float
    hp: Hyperparams | None
    train_seconds: float
    nn_seconds: float
    step_seconds: float


# ---------------------------------------------------------------------------
# single fits


def _fit_regression(method: MethodSpec, k, tc: TrainConfig, kind, train_ds, eval_sets):
    X, y = train_ds.X, train_ds.y
    hp0 = default_hyperparams(X, y)
    try:
        if method.name == "loo_k":
            hp, trace = train(X, y, hp0, kind, tc)
        else:
            hp, trace = train_baseline(method.name, X, y, hp0, kind, tc)
    except TrainingError as exc:
        raise TrainingError(f"method {method.name} (k={k}, seed={tc.seed}): {exc}", exc.step) from exc
    if method.name == "mll":
        preds = [dense_predict(X, y, hp, kind, ds.X) for ds in eval_sets]
    else:
        index = build_index(X, hp, tc.backend)
        preds = [predict(X, y, hp, kind, k, index, ds.X) for ds in eval_sets]
    reports = [evaluate_regression(p, ds.y) if len(ds) else MetricsReport() for p, ds in zip(preds, eval_sets)]
    return hp, trace, reports


def _fit_classification(method: MethodSpec, k, tc: TrainConfig, kind, train_ds, eval_sets, n_classes):
    if method.name != "loo_k":
        raise ConfigError(f"classification supports only the loo_k method, got {method.name!r}")
    ds = ClassDataset.from_classes(train_ds.X, train_ds.y, n_classes)
    try:
        state, trace = train_classifier(ds, tc, kind)
    except TrainingError as exc:
        raise TrainingError(f"method {method.name} (k={k}, seed={tc.seed}): {exc}", exc.step) from exc
    index = classifier_index(ds.X, state, tc.backend)
    reports = []
    for e in eval_sets:
        if not len(e):
            reports.append(MetricsReport())
            continue
        if state.multiclass:
            proba = multiclass_predict(state, ds.X, ds.labels, index, e.X, seed=tc.seed)
        else:
            p = predict_binary(state, ds.X, ds.labels, index, e.X, seed=tc.seed)
            proba = np.column_stack([1.0 - p, p])
        reports.append(evaluate_classification(proba, e.y))
    return None, trace, reports


def fit_and_evaluate(cfg: ExperimentConfig, method: MethodSpec, seed: int, train_ds, test_ds, val_ds, k_values=None):
    """Train ``method`` for every k (selecting by validation LL when there are several)."""
    kind = as_kind(cfg.kernel)
    ks = (k_values or cfg.k_values) if method.uses_k else [None]
    if len(ks) > 1 and not len(val_ds):
        raise ConfigError("several k_values need a non-empty validation split for selection")
    best = None
    n_classes = int(max(train_ds.y.max(), test_ds.y.max() if len(test_ds) else 0)) + 1 if train_ds.task != "regression" else 0
    for k in ks:
        tc = cfg.train_config_for(method, k if k is not None else cfg.k_values[0], seed, len(train_ds))
        if train_ds.task == "regression":
            hp, trace, (rep_test, rep_val) = _fit_regression(method, k, tc, kind, train_ds, [test_ds, val_ds])
        else:
            hp, trace, (rep_test, rep_val) = _fit_classification(method, k, tc, kind, train_ds, [test_ds, val_ds], n_classes)
        val_ll = -rep_val.nll if len(val_ds) else math.nan
        res = FitResult(
            method.name,
            k,
            rep_test,
            val_ll,
            hp,
            trace.train_seconds,
            trace.nn_seconds,
            float(np.mean(trace.step_seconds)) if trace.step_seconds else math.nan,
        )
        if best is None or res.val_ll > best.val_ll:
            best = res
    return best


def _row(res: FitResult, seed: int, **extra) -> dict:
    row = {c: "" for c in COLUMNS}
    row.update(method=res.method, seed=seed, k="" if res.k is None else res.k)
    for c in ("nll", "rmse", "crps", "error"):
        row[c] = getattr(res.report, c)
    if res.hp is not None:
        row["lengthscale_gm"] = float(np.exp(np.mean(res.hp.log_lengthscales)))
        row["obs_noise"] = res.hp.obs_noise
    row.update(train_seconds=res.train_seconds, nn_seconds=res.nn_seconds, step_seconds=res.step_seconds)
    row.update(extra)
    return row


def _true_hp(data: dict) -> Hyperparams:
    D = int(data.get("D", 4))
    return Hyperparams(
        np.full(D, math.log(float(data.get("lengthscale", 0.5)))),
        math.log(float(data.get("kernel_scale", 1.0))),
        math.log(float(data.get("obs_noise", 0.1))),
    )


def _split(data: dict, N: int, seed: int):
    split = data.get("split", [15, 3, 2])
    if split == "half":
        split = [1, 1, 0]
    if not (isinstance(split, list) and len(split) == 3):
        raise ConfigError('data.split must be "half" or [train, test, validation]')
    return split_indices(N, SplitSpec(*map(float, split), seed=seed))


def _prepare(ds: Dataset, data: dict, seed: int):
    tr, te, va = _split(data, len(ds), seed)
    train_ds, t = normalize(ds.subset(tr))
    return train_ds, t.transform(ds.subset(te)), t.transform(ds.subset(va))


# ---------------------------------------------------------------------------
# experiment runners


def _run_misspec(cfg: ExperimentConfig):
    data = cfg.data
    N = int(data.get("N", 2048))
    gammas = [float(g) for g in data.get("gammas", [0.0, 0.5, 1.0, 2.0])]
    warps = data.get("warps", ["neg_stretch", "pos_power", "cubic"])
    data = {"split": "half", **data}
    hp_true = _true_hp(data)
    rows = []
    for seed in cfg.seeds:
        base = sample_gp_dataset(N, hp_true.dim, hp_true, "rbf", seed)
        # gamma = 0 is the identity for every warp, so it is fitted once and reported per warp
        settings = [(None, 0.0)] if 0.0 in gammas else []
        settings += [(w, g) for w in warps for g in gammas if g != 0.0]
        for warp, gamma in settings:
            X = base.X if warp is None else apply_warp(base.X, WarpSpec(warp, gamma))
            tr, te, va = _prepare(Dataset(X, base.y), data, seed)
            for m in cfg.methods:
                res = fit_and_evaluate(cfg, m, seed, tr, te, va)
                for w in warps if warp is None else [warp]:
                    rows.append(_row(res, seed, warp=w, gamma=gamma, N=N))
    return rows


def _run_ksweep(cfg: ExperimentConfig):
    data = cfg.data
    N = int(data.get("N", 1024))
    hp_true = _true_hp(data)
    rows = []
    for seed in cfg.seeds:
        tr, te, va = _prepare(sample_gp_dataset(N, hp_true.dim, hp_true, "rbf", seed), data, seed)
        for m in cfg.methods:
            for k in cfg.k_values if m.uses_k else [None]:
                res = fit_and_evaluate(cfg, m, seed, tr, te, va, k_values=[k] if k else None)
                rows.append(_row(res, seed, N=N))
    return rows


def synthetic_regression(N: int, D: int, seed: int) -> Dataset:
    """Inexpensive large-N regression data: a fixed random smooth function plus noise."""
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((D, 16)) * 2.0
    b = rng.uniform(0, 2 * math.pi, 16)
    X = rng.uniform(-1.0, 1.0, (N, D))
    y = np.cos(X @ W + b).mean(axis=1) * 2.0 + 0.1 * rng.standard_normal(N)
    return Dataset(X, y, meta={"generator": "random_features", "seed": seed})


def _run_runtime(cfg: ExperimentConfig):
    data = cfg.data
    Ns = [int(n) for n in data.get("N_values", [1000, 10000, 100000])]
    D = int(data.get("D", 4))
    rows = []
    for seed in cfg.seeds:
        for N in Ns:
            ds, _ = normalize(synthetic_regression(N, D, seed))
            empty = ds.subset(np.arange(0))
            for m in cfg.methods:
                if m.name == "mll":
                    raise ConfigError("the runtime experiment does not support exact mll")
                for k in cfg.k_values:
                    res = fit_and_evaluate(cfg, m, seed, ds, empty, empty, k_values=[k])
                    rows.append(_row(res, seed, N=N))
    return rows


def _run_degenerate(cfg: ExperimentConfig):
    data = cfg.data
    N = int(data.get("N", 1024))
    hp_true = _true_hp(data)
    rows = []
    for seed in cfg.seeds:
        ds = read_csv(data["csv"]) if "csv" in data else sample_gp_dataset(N, hp_true.dim, hp_true, "rbf", seed)
        tr, te, va = _prepare(ds, data, seed)
        aug = degenerate_augment(tr, seed)
        for variant, train_ds in (("original", tr), ("degenerate", aug)):
            for m in cfg.methods:
                res = fit_and_evaluate(cfg, m, seed, train_ds, te, va)
                rows.append(_row(res, seed, N=len(train_ds), variant=variant))
    return rows


def _run_custom(cfg: ExperimentConfig):
    data = cfg.data
    if "csv" not in data:
        raise ConfigError("custom experiments need data.csv")
    task = data.get("task", "regression")
    ds = read_csv(data["csv"], task)
    if task != "regression":
        _, codes = np.unique(ds.y, return_inverse=True)
        ds = Dataset(ds.X, codes, task, ds.meta)
    rows = []
    for seed in cfg.seeds:
        tr, te, va = _prepare(ds, data, seed)
        for m in cfg.methods:
            res = fit_and_evaluate(cfg, m, seed, tr, te, va)
            rows.append(_row(res, seed, N=len(ds)))
    return rows


_RUNNERS = {
    "misspec": _run_misspec,
    "ksweep": _run_ksweep,
    "runtime": _run_runtime,
    "degenerate": _run_degenerate,
    "custom": _run_custom,
}


# ---------------------------------------------------------------------------
# outputs


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else repr(float(v))
    return str(v)


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in COLUMNS])


def read_results_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


GROUP_KEYS = ("method", "k", "warp", "gamma", "N", "variant")


def aggregate(rows):
    """Mean and standard error over seeds for each (method, k, warp, gamma, N, variant) group."""
    groups = {}
    for r in rows:
        key = tuple(_fmt(r[c]) for c in GROUP_KEYS)
        groups.setdefault(key, []).append(r)
    out = []
    for key, rs in groups.items():
        entry = dict(zip(GROUP_KEYS, key))
        entry["n_seeds"] = len(rs)
        for c in METRIC_COLUMNS + TIMING_COLUMNS:
            vals = np.array([float(r[c]) for r in rs if _fmt(r[c]) != ""])
            if len(vals):
                se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
                entry[c] = {"mean": float(np.mean(vals)), "stderr": se}
        out.append(entry)
    return out


def _plot(cfg: ExperimentConfig, agg, out_dir):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "lookgp"
    if cfg.experiment == "misspec":
        xkey, series, metric = "gamma", ("method", "warp"), "nll"
    elif cfg.experiment == "runtime":
        xkey, series, metric = "N", ("method", "k"), "step_seconds"
    elif cfg.experiment == "ksweep":
        xkey, series, metric = "k", ("method",), "nll"
    else:
        return []
    lines = {}
    for e in agg:
        if metric not in e or e[xkey] == "":
            continue
        lines.setdefault(tuple(e[s] for s in series), []).append((float(e[xkey]), e[metric]["mean"], e[metric]["stderr"]))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, pts in sorted(lines.items()):
        pts.sort()
        x, m, s = map(np.array, zip(*pts))
        ax.errorbar(x, m, yerr=s, marker="o", capsize=2, label=" / ".join(str(v) for v in label))
    if xkey == "N":
        ax.set_xscale("log")
    ax.set_xlabel(xkey)
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = os.path.join(out_dir, f"{cfg.experiment}_{metric}.svg")
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return [os.path.basename(path)]


def run_experiment(config) -> dict:
    """Run an experiment from a config dict, :class:`ExperimentConfig` or JSON path.

    Writes ``results.csv``, ``manifest.json`` and optional SVG plots into the
    output directory and returns the manifest.
    """
    if isinstance(config, (str, os.PathLike)):
        cfg = ExperimentConfig.load(config)
    elif isinstance(config, dict):
        cfg = ExperimentConfig.from_dict(config)
    else:
        cfg = config
    rows = _RUNNERS[cfg.experiment](cfg)
    os.makedirs(cfg.output_dir, exist_ok=True)
    csv_path = os.path.join(cfg.output_dir, "results.csv")
    write_results_csv(csv_path, rows)
    agg = aggregate(rows)
    plots = _plot(cfg, agg, cfg.output_dir) if cfg.plots else []
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "seeds": cfg.seeds,
        "methods": [m.name for m in cfg.methods],
        "k_values": cfg.k_values,
        "kernel": cfg.kernel,
        "train_config": cfg.train_config,
        "data": cfg.data,
        "results_csv": "results.csv",
        "timing_columns": list(TIMING_COLUMNS),
        "plots": plots,
        "aggregates": agg,
    }
    with open(os.path.join(cfg.output_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=_fmt)
    return manifest
