"""Kernel evaluation, dense Gram caching and the task-coupled Gram."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TensorMtlError

KERNEL_KINDS = ("linear", "rbf")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice.  ``rbf_gamma`` is the decay rate in exp(-g * ||x-z||^2)."""

    kind: str = "linear"
    rbf_gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.rbf_gamma is None or not self.rbf_gamma > 0:
                raise ValueError("rbf kernel needs rbf_gamma > 0")
        elif self.rbf_gamma is not None:
            raise ValueError("rbf_gamma is only valid for the rbf kernel")


def kernel_eval(spec: KernelSpec, x: np.ndarray, z: np.ndarray) -> float:
    """Evaluate the kernel on a single pair of vectors."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise TensorMtlError(
            f"kernel arguments must be equal-length vectors, got {x.shape} and {z.shape}"
        )
    if spec.kind == "linear":
        return float(x @ z)
    d2 = float(np.sum((x - z) ** 2))
    return float(np.exp(-spec.rbf_gamma * d2))


def kernel_matrix(spec: KernelSpec, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Kernel block between the rows of ``X`` and the rows of ``Z``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if X.shape[1] != Z.shape[1]:
        raise TensorMtlError(
            f"feature dimensions differ: {X.shape[1]} vs {Z.shape[1]}"
        )
    if spec.kind == "linear":
        return X @ Z.T
    sq = (
        np.sum(X * X, axis=1)[:, None]
        + np.sum(Z * Z, axis=1)[None, :]
        - 2.0 * (X @ Z.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-spec.rbf_gamma * sq)


class GramCache:
    """Dense symmetric kernel matrix over one training set.

    Kernel values do not depend on the factors, so one cache serves every
    subproblem of a training run.  Immutable after construction.
    """

    def __init__(self, spec: KernelSpec, X: np.ndarray, offsets=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        K = kernel_matrix(spec, X, X)
        K = (K + K.T) / 2.0
        if spec.kind == "rbf":
            np.fill_diagonal(K, 1.0)
        K.setflags(write=False)
        self.spec = spec
        self.matrix = K
        self.offsets = None if offsets is None else np.asarray(offsets, dtype=int)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def subset(self, idx: np.ndarray, offsets=None) -> "GramCache":
        """Cache restricted to the given sample indices (for CV folds)."""
        sub = object.__new__(GramCache)
        sub.spec = self.spec
        mat = self.matrix[np.ix_(idx, idx)]
        mat.setflags(write=False)
        sub.matrix = mat
        sub.offsets = None if offsets is None else np.asarray(offsets, dtype=int)
        return sub


def coupled_gram(
    K: np.ndarray,
    task_mixing: np.ndarray,
    task_of_sample: np.ndarray,
    labels: np.ndarray | None = None,
) -> np.ndarray:
    """Task-coupled Gram over samples.

    Entry (j, j') is ``<u_t, u_q> k(x_j, x_j')`` for the samples' tasks t, q,
    multiplied by ``y_j y_j'`` when ``labels`` is given (classification).
    Regression omits the labels.

    Parameters
    ----------
    K : (m, m) plain kernel Gram (e.g. ``GramCache.matrix``).
    task_mixing : (T, R) mixing-vector rows.
    task_of_sample : (m,) flat task id per sample.
    """
    if isinstance(K, GramCache):
        K = K.matrix
    task_of_sample = np.asarray(task_of_sample, dtype=int)
    if K.shape[0] != K.shape[1] or K.shape[0] != task_of_sample.shape[0]:
        raise TensorMtlError("Gram size does not match the sample/task layout")
    rows = task_mixing[task_of_sample]            # (m, R)
    Q = K * (rows @ rows.T)
    if labels is not None:
        labels = np.asarray(labels, dtype=float)
        Q *= labels[:, None]
        Q *= labels[None, :]
    return Q
