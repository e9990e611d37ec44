"""Command-line interface: ``lookgp train | predict | experiment | bench``.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
Diagnostics go to standard error; results go to files.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .baselines import train_baseline
from .classification import (
    ClassDataset,
    ClassifierState,
    classifier_index,
    multiclass_predict,
    predict_binary,
    train_classifier,
)
from .harness.data import Normalizer, read_csv
from .harness.experiments import ConfigError, ExperimentConfig, run_experiment
from .harness.metrics import gaussian_log_density
from .kernels import Hyperparams, as_kind
from .linalg import FactorizationError, dense_predict
from .neighbors import build_index
from .optim import TrainingError
from .regression import TrainConfig, default_hyperparams, predict, train

log = logging.getLogger("lookgp")

TASKS = {"reg": "regression", "bin": "classification", "multi": "classification"}
MODEL_FORMAT = "lookgp-model/1"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(name):
    def conv(s):
        try:
            v = int(s)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {s!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v

    return conv


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lookgp", description="GPs trained with nearest-neighbor leave-one-out objectives")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a model to a CSV dataset")
    t.add_argument("--data", required=True, help="training CSV (target column 'y' or 'label')")
    t.add_argument("--task", required=True, choices=sorted(TASKS))
    t.add_argument("--k", type=_positive_int("--k"), default=32)
    t.add_argument("--out", required=True, help="model JSON to write")
    t.add_argument("--config", help="JSON with TrainConfig fields plus optional 'kernel' and 'objective'")

    pr = sub.add_parser("predict", help="predict with a trained model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True, help="test CSV; the target column is optional")
    pr.add_argument("--out", required=True)
    pr.add_argument("--train", help="training CSV (defaults to the path stored in the model)")

    e = sub.add_parser("experiment", help="run an experiment config")
    e.add_argument("--config", required=True)

    b = sub.add_parser("bench", help="run the runtime study from a config")
    b.add_argument("--config", required=True)
    return p


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require_file(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} not found: {path}")


def _load_json(path, what):
    _require_file(path, what)
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def _train_settings(args):
    extra = _load_json(args.config, "config file") if args.config else {}
    if not isinstance(extra, dict):
        raise UsageError("--config must contain a JSON object")
    kernel = extra.pop("kernel", "matern52")
    objective = extra.pop("objective", "loo_k")
    try:
        tc = TrainConfig.from_dict({**extra, "k": args.k})
        as_kind(kernel)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid --config: {exc}") from None
    return tc, kernel, objective


def cmd_train(args) -> int:
    _require_file(args.data, "training data")
    task = TASKS[args.task]
    ds = read_csv(args.data, task)
    tc, kernel, objective = _train_settings(args)
    N = len(ds)
    if args.k > N - 1:
        raise UsageError(f"--k={args.k} must be at most N-1={N - 1} for this dataset")
    tc.batch_size = min(tc.batch_size, N)
    norm = Normalizer.fit(ds)
    if norm.flagged:
        log.warning("constant input columns %s are passed through unscaled", norm.constant_columns)
    nds = norm.transform(ds)
    model = {
        "format": MODEL_FORMAT,
        "version": __version__,
        "task": args.task,
        "kernel": as_kind(kernel).value,
        "k": args.k,
        "objective": objective,
        "train_config": tc.to_dict(),
        "normalization": {
            "x_mean": norm.x_mean.tolist(),
            "x_scale": norm.x_scale.tolist(),
            "y_mean": norm.y_mean,
            "y_scale": norm.y_scale,
            "constant_columns": norm.constant_columns,
        },
        "train_data": {
            "path": os.path.abspath(args.data),
            "sha256": _sha256(args.data),
            "n_points": N,
            "features": ds.meta["features"],
        },
    }
    if task == "regression":
        if objective not in ("loo_k", "mll", "mll_k", "vecchia"):
            raise UsageError(f"unknown objective {objective!r}")
        hp0 = default_hyperparams(nds.X, nds.y)
        if objective == "loo_k":
            hp, trace = train(nds.X, nds.y, hp0, kernel, tc)
        else:
            hp, trace = train_baseline(objective, nds.X, nds.y, hp0, kernel, tc)
        model["hyperparams"] = hp.to_dict()
    else:
        if objective != "loo_k":
            raise UsageError("classification supports only the loo_k objective")
        classes, codes = np.unique(ds.y, return_inverse=True)
        if args.task == "bin" and len(classes) != 2:
            raise UsageError(f"--task bin needs exactly 2 classes, found {len(classes)}")
        if args.task == "multi" and len(classes) < 3:
            raise UsageError(f"--task multi needs at least 3 classes, found {len(classes)}")
        cds = ClassDataset.from_classes(nds.X, codes, len(classes))
        state, trace = train_classifier(cds, tc, kernel)
        model["classes"] = classes.tolist()
        model["classifier"] = state.to_dict()
    model["trace"] = {"final_objective": trace.objective[-1] if trace.objective else None, "steps": tc.n_steps}
    with open(args.out, "w") as fh:
        json.dump(model, fh, indent=2)
    log.info("wrote model to %s", args.out)
    return 0


def _rows_to_csv(path, header, cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def cmd_predict(args) -> int:
    model = _load_json(args.model, "model file")
    if model.get("format") != MODEL_FORMAT:
        raise UsageError(f"{args.model} is not a lookgp model file")
    train_path = args.train or model["train_data"]["path"]
    _require_file(train_path, "training data")
    if _sha256(train_path) != model["train_data"]["sha256"]:
        raise UsageError(f"training data {train_path} does not match the hash recorded in the model")
    _require_file(args.data, "test data")
    task = TASKS[model["task"]]
    tr = read_csv(train_path, task)
    te = read_csv(args.data, task, require_target=False)
    if te.X.shape[1] != tr.X.shape[1]:
        raise UsageError(f"test data has {te.X.shape[1]} features, model expects {tr.X.shape[1]}")
    nm = model["normalization"]
    norm = Normalizer(np.array(nm["x_mean"]), np.array(nm["x_scale"]), nm["y_mean"], nm["y_scale"], nm["constant_columns"])
    ntr = norm.transform(tr)
    Xte = (te.X - norm.x_mean) / norm.x_scale
    kind = as_kind(model["kernel"])
    has_y = te.meta["has_target"]
    if task == "regression":
        hp = Hyperparams.from_dict(model["hyperparams"])
        if model["objective"] == "mll":
            pred = dense_predict(ntr.X, ntr.y, hp, kind, Xte)
        else:
            index = build_index(ntr.X, hp, model["train_config"]["backend"])
            pred = predict(ntr.X, ntr.y, hp, kind, min(model["k"], len(tr)), index, Xte)
        mean = pred.mean * norm.y_scale + norm.y_mean
        var = pred.var_observed * norm.y_scale**2
        header, cols = ["mean", "var"], [mean, var]
        if has_y:
            header.append("nll")
            cols.append(-gaussian_log_density(mean, var, te.y))
    else:
        state = ClassifierState.from_dict(model["classifier"])
        classes = np.array(model["classes"])
        codes = np.searchsorted(classes, tr.y)
        cds = ClassDataset.from_classes(ntr.X, codes, len(classes))
        index = classifier_index(cds.X, state, model["train_config"]["backend"])
        seed = model["train_config"]["seed"]
        if state.multiclass:
            proba = multiclass_predict(state, cds.X, cds.labels, index, Xte, seed=seed)
        else:
            p = predict_binary(state, cds.X, cds.labels, index, Xte, seed=seed)
            proba = np.column_stack([1.0 - p, p])
        header = [f"prob_{c}" for c in classes] + ["pred"]
        cols = list(proba.T) + [classes[np.argmax(proba, axis=1)]]
        if has_y:
            known = np.isin(te.y, classes)
            pos = np.searchsorted(classes, te.y).clip(0, len(classes) - 1)
            p_true = np.where(known, proba[np.arange(len(te)), pos], 0.0)
            header.append("nll")
            cols.append(-np.log(np.maximum(p_true, 1e-300)))
    _rows_to_csv(args.out, header, cols)
    log.info("wrote %d predictions to %s", len(te), args.out)
    return 0


def _run_config(path, force_runtime=False) -> int:
    _require_file(path, "config file")
    try:
        cfg = ExperimentConfig.load(path)
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if force_runtime:
        if cfg.experiment != "runtime":
            log.info("bench: running config as a runtime study (was %r)", cfg.experiment)
        cfg.experiment = "runtime"
    manifest = run_experiment(cfg)
    log.info("wrote %s and manifest.json to %s", manifest["results_csv"], cfg.output_dir)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="lookgp: %(levelname)s: %(message)s")
    try:
        args = parser.parse_args(argv)
        if not args.verbose:
            log.setLevel(logging.WARNING)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "predict":
            return cmd_predict(args)
        return _run_config(args.config, force_runtime=args.command == "bench")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (TrainingError, FactorizationError, ArithmeticError) as exc:
        step = f" at step {exc.step}" if isinstance(exc, TrainingError) else ""
        print(f"lookgp: numeric failure{step}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError, OSError) as exc:
        print(f"lookgp: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
