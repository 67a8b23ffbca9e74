"""Command-line front end.

Subcommands: ``synth``, ``train``, ``cv``, ``predict``, ``eval``,
``relatedness``.  Every run writes exactly one JSON manifest next to its
output (resolved configuration, seed, input digests, a timing breakdown),
which makes runs reproducible byte for byte apart from the timing fields.

Flags override config-file keys; config files are JSON with a mandatory
``format_version`` field.  The environment variable ``TENSOR_MTL_LOG``
selects the log level.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .baselines import BaselineModel, baseline_predict
from .data import (
    MultiTaskDataset,
    SynthConfig,
    config_grid,
    generate_synthetic,
    kfold_cv,
    load_csv,
    save_csv,
)
from .errors import (
    ConvergenceError,
    DatasetFormatError,
    DegenerateConstraintsError,
    EmptyTaskError,
    FactorizationError,
    IllPosedProblemError,
    TensorMtlError,
    TrainingError,
    UnsupportedKernelError,
)
from .factors import explicit_weights, mixing_matrix, relatedness_gram
from .grid import TaskGrid
from .kernels import KernelSpec
from .metrics import (
    classification_report,
    per_task_accuracy,
    per_task_regression,
    regression_report,
    report_to_text,
)
from .model_io import load_model, save_model
from .trainers import TrainConfig, TrainedModel, predict_batch, train

log = logging.getLogger("tensormtl")

CONFIG_FORMAT_VERSION = 1

_EXIT_USAGE = 2
_EXIT_DATA = 3
_EXIT_SOLVER = 4
_EXIT_MODEL = 5


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, command, config, seed, inputs, timing, outputs):
    payload = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "tensormtl": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "input_digests": {str(p): _sha256(p) for p in inputs},
        "timing": timing,
        "outputs": [str(o) for o in outputs],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a JSON object")
    version = cfg.get("format_version")
    if version != CONFIG_FORMAT_VERSION:
        raise ValueError(
            f"config field 'format_version' must be {CONFIG_FORMAT_VERSION}, "
            f"got {version!r}"
        )
    return cfg


def _merged(args, config: dict, key: str, default=None):
    """Flag value if given, else config key, else default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _parse_shape(text) -> tuple:
    if isinstance(text, (list, tuple)):
        return tuple(int(v) for v in text)
    try:
        return tuple(int(p) for p in str(text).split(","))
    except ValueError:
        raise ValueError(f"config field 'shape' is invalid: {text!r}") from None


def _kernel_from(args, config) -> KernelSpec:
    kind = _merged(args, config, "kernel", "linear")
    gamma = _merged(args, config, "gamma")
    if kind == "rbf":
        if gamma is None:
            raise ValueError("config field 'gamma' is required for the rbf kernel")
        return KernelSpec("rbf", rbf_gamma=float(gamma))
    return KernelSpec("linear")


def _train_config_from(args, config) -> TrainConfig:
    variant = _merged(args, config, "variant")
    if variant is None:
        raise ValueError("config field 'variant' is required")
    return TrainConfig(
        variant=str(variant).lower(),
        C=float(_merged(args, config, "C", 1.0)),
        rank=int(_merged(args, config, "rank", 1)),
        kernel=_kernel_from(args, config),
        epsilon=float(_merged(args, config, "epsilon", 0.1)),
        stop_threshold=float(_merged(args, config, "stop_threshold", 1e-3)),
        early_stop=bool(_merged(args, config, "early_stop", False)),
        max_outer_iters=int(_merged(args, config, "max_iters", 50)),
        seed=int(_merged(args, config, "seed", 0)),
        threads=int(_merged(args, config, "threads", 1)),
    )


def _dataset_from(args, config, path) -> MultiTaskDataset:
    shape = _merged(args, config, "shape")
    if shape is None:
        raise ValueError("config field 'shape' is required to read a dataset")
    kind = _merged(args, config, "kind")
    if kind is None:
        raise ValueError("config field 'kind' is required to read a dataset")
    return load_csv(path, TaskGrid(_parse_shape(shape)), kind)


def _config_dict(cfg: TrainConfig) -> dict:
    return {
        "variant": cfg.variant,
        "C": cfg.C,
        "rank": cfg.rank,
        "kernel": cfg.kernel.kind,
        "gamma": cfg.kernel.rbf_gamma,
        "epsilon": cfg.epsilon,
        "stop_threshold": cfg.stop_threshold,
        "early_stop": cfg.early_stop,
        "max_outer_iters": cfg.max_outer_iters,
        "seed": cfg.seed,
        "threads": cfg.threads,
    }


# --- subcommands --------------------------------------------------------------


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    synth_cfg = dict(config.get("synth", {}))
    t0 = time.perf_counter()
    cfg = SynthConfig(
        shape=_parse_shape(_merged(args, synth_cfg, "shape", (3, 4, 5))),
        d=int(_merged(args, synth_cfg, "d", 100)),
        rank=int(_merged(args, synth_cfg, "rank", 3)),
        m_train=int(_merged(args, synth_cfg, "m_train", 60)),
        m_test=int(_merged(args, synth_cfg, "m_test", 20)),
        snr_db=(
            None
            if str(_merged(args, synth_cfg, "snr_db", 10.0)).lower()
            in ("none", "inf", "noiseless")
            else float(_merged(args, synth_cfg, "snr_db", 10.0))
        ),
        kind=str(_merged(args, synth_cfg, "kind", "regression")),
        seed=int(_merged(args, synth_cfg, "seed", 0)),
    )
    train_ds, test_ds, truth = generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    train_path = os.path.join(args.out, "train.csv")
    test_path = os.path.join(args.out, "test.csv")
    truth_path = os.path.join(args.out, "truth.npz")
    save_csv(train_ds, train_path)
    save_csv(test_ds, test_path)
    with open(truth_path, "wb") as fh:
        np.savez(
            fh,
            weights=truth.weights,
            biases=truth.biases,
            shared=truth.shared,
            **{f"factor_{n}": f for n, f in enumerate(truth.factors.factors)},
        )
    _write_manifest(
        os.path.join(args.out, "manifest.json"),
        "synth",
        {
            "shape": list(cfg.shape),
            "d": cfg.d,
            "rank": cfg.rank,
            "m_train": cfg.m_train,
            "m_test": cfg.m_test,
            "snr_db": cfg.snr_db,
            "kind": cfg.kind,
            "seed": cfg.seed,
        },
        cfg.seed,
        [args.config] if args.config else [],
        {"total_seconds": time.perf_counter() - t0},
        [train_path, test_path, truth_path],
    )
    log.info("wrote %s and %s", train_path, test_path)
    return 0


def cmd_train(args) -> int:
    config = _load_config(args.config)
    cfg = _train_config_from(args, config)
    dataset = _dataset_from(args, config, args.data)
    model, trace = train(dataset, cfg)
    save_model(model, args.out)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "train",
        _config_dict(cfg),
        cfg.seed,
        [p for p in (args.config, args.data) if p],
        trace.timing_breakdown()
        | {
            "iterations": trace.iterations,
            "relative_errors": trace.relative_errors,
        },
        [args.out],
    )
    log.info(
        "trained %s in %d iterations (final relative error %s)",
        cfg.variant,
        trace.iterations,
        model.meta.get("final_relative_error"),
    )
    return 0


def _parse_values(text):
    if text is None:
        return None
    return [float(v) for v in str(text).split(",")]


def cmd_cv(args) -> int:
    config = _load_config(args.config)
    cv_cfg = dict(config.get("cv", {}))
    base = _train_config_from(args, config)
    dataset = _dataset_from(args, config, args.data)
    t0 = time.perf_counter()
    folds = int(_merged(args, cv_cfg, "folds", 5))
    grid_c = _parse_values(args.grid_c) or cv_cfg.get("C")
    grid_rank = _parse_values(args.grid_rank) or cv_cfg.get("rank")
    grid_gamma = _parse_values(args.grid_gamma) or cv_cfg.get("gamma")
    grid_eps = _parse_values(args.grid_epsilon) or cv_cfg.get("epsilon")
    cells = config_grid(
        base,
        C_values=grid_c,
        rank_values=None if grid_rank is None else [int(r) for r in grid_rank],
        gamma_values=grid_gamma,
        epsilon_values=grid_eps,
    )
    best, results = kfold_cv(dataset, cells, folds, base.seed, threads=base.threads)
    payload = {
        "best": _config_dict(best),
        "cells": [
            {
                "config": _config_dict(r["config"]),
                "score": r["score"],
                "fold_scores": r["fold_scores"],
            }
            for r in results
        ],
        "score_kind": "accuracy" if dataset.kind == "classification" else "rmse",
    }
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _write_manifest(
        str(args.out) + ".manifest.json",
        "cv",
        _config_dict(base) | {"folds": folds, "cells": len(cells)},
        base.seed,
        [p for p in (args.config, args.data) if p],
        {"total_seconds": time.perf_counter() - t0},
        [args.out],
    )
    for r in results:
        log.info(
            "cell C=%g rank=%d gamma=%s score=%.6f",
            r["config"].C,
            r["config"].rank,
            r["config"].kernel.rbf_gamma,
            r["score"],
        )
    return 0


def cmd_predict(args) -> int:
    t0 = time.perf_counter()
    model = load_model(args.model)
    grid = model.grid
    dataset = load_csv(args.data, grid, "regression")  # labels ignored here
    if isinstance(model, TrainedModel):
        preds = predict_batch(model, dataset.X, dataset.task_of_sample)
    elif isinstance(model, BaselineModel):
        preds = baseline_predict(model, dataset.X, dataset.task_of_sample)
    else:
        raise TensorMtlError("unsupported model type")
    multi = grid.multi_indices()
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [f"t{n + 1}" for n in range(grid.nmodes)] + ["prediction"]
        )
        for i in range(dataset.n_samples):
            row = [str(int(v)) for v in multi[dataset.task_of_sample[i]]]
            row.append(repr(float(preds[i])))
            writer.writerow(row)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "predict",
        {"model": str(args.model)},
        None,
        [args.model, args.data],
        {"total_seconds": time.perf_counter() - t0},
        [args.out],
    )
    return 0


def _read_predictions(path, grid: TaskGrid):
    tasks = []
    values = []
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty predictions file", line=1) from None
        expected = [f"t{n + 1}" for n in range(grid.nmodes)] + ["prediction"]
        if [h.strip() for h in header] != expected:
            raise DatasetFormatError(
                f"predictions header must be {','.join(expected)}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != grid.nmodes + 1:
                raise DatasetFormatError(
                    f"expected {grid.nmodes + 1} columns", line=lineno
                )
            try:
                multi = [int(c) for c in row[: grid.nmodes]]
                value = float(row[grid.nmodes])
            except ValueError:
                raise DatasetFormatError("non-numeric cell", line=lineno) from None
            tasks.append(grid.linearize(multi))
            values.append(value)
    return np.array(tasks, dtype=int), np.array(values)


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    t0 = time.perf_counter()
    dataset = _dataset_from(args, config, args.data)
    pred_tasks, preds = _read_predictions(args.pred, dataset.grid)
    if preds.shape[0] != dataset.n_samples:
        raise DatasetFormatError(
            f"cannot join: {preds.shape[0]} predictions vs "
            f"{dataset.n_samples} labeled samples"
        )
    if not np.array_equal(pred_tasks, dataset.task_of_sample):
        raise DatasetFormatError(
            "cannot join: task ids of predictions and data disagree"
        )
    if dataset.kind == "classification":
        report = classification_report(dataset.y, preds)
        breakdown = per_task_accuracy(
            dataset.y, preds, dataset.task_of_sample, dataset.grid.total
        )
    else:
        report = regression_report(dataset.y, preds)
        breakdown = per_task_regression(
            dataset.y, preds, dataset.task_of_sample, dataset.grid.total
        )
    text = report_to_text(report)
    if args.per_task:
        metric = "accuracy" if dataset.kind == "classification" else "rmse"
        lines = [f"task_{t}_{metric} {v}" for t, _, v in breakdown]
        text += "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        _write_manifest(
            str(args.out) + ".manifest.json",
            "eval",
            {"per_task": bool(args.per_task)},
            None,
            [args.pred, args.data],
            {"total_seconds": time.perf_counter() - t0},
            [args.out],
        )
    sys.stdout.write(text)
    return 0


def cmd_relatedness(args) -> int:
    t0 = time.perf_counter()
    model = load_model(args.model)
    if not isinstance(model, TrainedModel):
        raise TensorMtlError("relatedness needs a tensor model file")
    gram = relatedness_gram(model.factors, model.grid)
    np.savetxt(args.out, gram, delimiter=",")
    outputs = [args.out]
    if args.weights:
        if model.kernel.kind != "linear":
            raise UnsupportedKernelError(
                "weight relatedness requires a linear kernel"
            )
        W = explicit_weights(model.dual, model.factors, model.grid)
        wpath = str(args.out) + ".weights.csv"
        np.savetxt(wpath, W @ W.T, delimiter=",")
        outputs.append(wpath)
    _write_manifest(
        str(args.out) + ".manifest.json",
        "relatedness",
        {"weights": bool(args.weights)},
        None,
        [args.model],
        {"total_seconds": time.perf_counter() - t0},
        outputs,
    )
    return 0


# --- argument parsing ----------------------------------------------------------


def _add_common_train_flags(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--variant", choices=("tsvc", "tsvr", "tlssvc", "tlssvr"))
    p.add_argument("--kernel", choices=("linear", "rbf"))
    p.add_argument("--gamma", type=float, help="rbf decay rate")
    p.add_argument("--C", type=float, dest="C")
    p.add_argument("--rank", type=int)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--stop-threshold", type=float, dest="stop_threshold")
    p.add_argument("--early-stop", action="store_const", const=True,
                   default=None, dest="early_stop")
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--shape", help="grid shape, e.g. 3,4,5")
    p.add_argument("--kind", choices=("classification", "regression"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tensormtl",
        description="Multitask SVM/LSSVM models over a task grid",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic train/test pair")
    p.add_argument("--config")
    p.add_argument("--shape")
    p.add_argument("--d", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--m-train", type=int, dest="m_train")
    p.add_argument("--m-test", type=int, dest="m_test")
    p.add_argument("--snr-db", dest="snr_db")
    p.add_argument("--kind", choices=("classification", "regression"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model")
    _add_common_train_flags(p)
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="k-fold cross-validation over a grid")
    _add_common_train_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--folds", type=int)
    p.add_argument("--grid-c", dest="grid_c", help="comma-separated C values")
    p.add_argument("--grid-rank", dest="grid_rank")
    p.add_argument("--grid-gamma", dest="grid_gamma")
    p.add_argument("--grid-epsilon", dest="grid_epsilon")
    p.add_argument("--out", required=True, help="report JSON to write")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("predict", help="predict a dataset with a model file")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="predictions CSV to write")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against labels")
    p.add_argument("--config")
    p.add_argument("--pred", required=True, help="predictions CSV")
    p.add_argument("--data", required=True, help="labeled CSV")
    p.add_argument("--shape")
    p.add_argument("--kind", choices=("classification", "regression"))
    p.add_argument("--per-task", action="store_true", dest="per_task")
    p.add_argument("--out", help="report file to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("relatedness", help="export the task-relatedness matrix")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", action="store_true",
                   help="also export the weight-vector relatedness (linear only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_relatedness)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("TENSOR_MTL_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetFormatError, EmptyTaskError, FileNotFoundError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_DATA
    except (
        TrainingError,
        ConvergenceError,
        FactorizationError,
        IllPosedProblemError,
        DegenerateConstraintsError,
    ) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_SOLVER
    except ValueError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except TensorMtlError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
