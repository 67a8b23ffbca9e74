"""Evaluation metrics and their flat-text / CSV serialization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import TensorMtlError


@dataclass(frozen=True)
class RegressionReport:
    rmse: float
    q2: float
    correlation: float

    def as_dict(self) -> dict:
        return {"rmse": self.rmse, "q2": self.q2, "correlation": self.correlation}


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def regression_report(y, y_hat) -> RegressionReport:
    """RMSE, normalized fit score and pooled Pearson correlation.

    The fit score is ``1 - ||y - y_hat||^2 / ||y||^2`` (1 for a perfect fit,
    0 for an all-zero prediction).
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise TensorMtlError("inputs must be equal-length vectors")
    if y.size < 2:
        raise TensorMtlError("need at least two samples")
    norm2 = float(y @ y)
    if norm2 == 0.0:
        raise TensorMtlError("fit score undefined for an all-zero target")
    err = y - y_hat
    rmse = float(np.sqrt(np.mean(err ** 2)))
    q2 = 1.0 - float(err @ err) / norm2
    sy = float(np.std(y))
    sh = float(np.std(y_hat))
    if sy == 0.0 or sh == 0.0:
        raise TensorMtlError("correlation undefined for a zero-variance input")
    corr = float(np.mean((y - y.mean()) * (y_hat - y_hat.mean())) / (sy * sh))
    return RegressionReport(rmse=rmse, q2=q2, correlation=corr)


def classification_report(y, y_hat) -> ClassificationReport:
    """Confusion-matrix metrics with +1 as the positive class.

    A denominator of zero with a vacuously satisfied numerator yields 1.0
    (e.g. precision when nothing was predicted positive and nothing was
    positive), with a warning.
    """
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1 or y.size == 0:
        raise TensorMtlError("inputs must be equal-length nonempty vectors")
    for name, arr in (("labels", y), ("predictions", y_hat)):
        if not np.all(np.isin(arr, (-1.0, 1.0))):
            raise TensorMtlError(f"{name} must be -1 or +1")
    tp = int(np.sum((y == 1) & (y_hat == 1)))
    fp = int(np.sum((y == -1) & (y_hat == 1)))
    tn = int(np.sum((y == -1) & (y_hat == -1)))
    fn = int(np.sum((y == 1) & (y_hat == -1)))
    accuracy = (tp + tn) / y.size
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        precision = 1.0 if tp + fn == 0 else 0.0
        warnings.warn("no positive predictions; precision set by convention")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        recall = 1.0 if tp + fp == 0 else 0.0
        warnings.warn("no positive labels; recall set by convention")
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ClassificationReport(
        accuracy=float(accuracy),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
    )


def report_to_text(report) -> str:
    """One ``key value`` pair per line."""
    lines = [f"{k} {v}" for k, v in report.as_dict().items()]
    return "\n".join(lines) + "\n"


def report_to_csv(report) -> str:
    d = report.as_dict()
    head = ",".join(d.keys())
    vals = ",".join(repr(v) if isinstance(v, float) else str(v) for v in d.values())
    return f"{head}\n{vals}\n"


def per_task_regression(y, y_hat, task_of_sample, n_tasks: int):
    """Per-task RMSE breakdown; entries are (task, count, rmse)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    task_of_sample = np.asarray(task_of_sample, dtype=int)
    rows = []
    for t in range(n_tasks):
        sel = task_of_sample == t
        if not np.any(sel):
            continue
        err = y[sel] - y_hat[sel]
        rows.append((t, int(sel.sum()), float(np.sqrt(np.mean(err ** 2)))))
    return rows


def per_task_accuracy(y, y_hat, task_of_sample, n_tasks: int):
    """Per-task accuracy breakdown; entries are (task, count, accuracy)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    task_of_sample = np.asarray(task_of_sample, dtype=int)
    rows = []
    for t in range(n_tasks):
        sel = task_of_sample == t
        if not np.any(sel):
            continue
        rows.append((t, int(sel.sum()), float(np.mean(y[sel] == y_hat[sel]))))
    return rows
