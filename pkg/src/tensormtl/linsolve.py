"""Saddle-point systems from least-squares variants, solved via a
positive-definite reformulation.

The KKT conditions of an equality-constrained least-squares fit produce

    [ 0   V' ] [x1]   [d1]
    [ V   H  ] [x2] = [d2]

with H symmetric positive definite and V a signed group indicator (one
nonzero of +-1 per row, one column per task).  Rather than solving the
indefinite block system, we solve ``S x1 = V' H^-1 d2 - d1`` with the
positive-definite ``S = V' H^-1 V`` and back out ``x2 = H^-1 (d2 - V x1)``.
One factorization of H serves every right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateConstraintsError,
    EmptyTaskError,
    FactorizationError,
)

# A pivot below this fraction of the largest diagonal entry means the matrix
# is not usefully positive definite; raise instead of jittering.
_PIVOT_FLOOR = 1e-12


@dataclass
class SaddleSystem:
    H: np.ndarray   # (k, k) symmetric positive definite
    V: np.ndarray   # (k, g) signed group indicator
    d1: np.ndarray  # (g,)
    d2: np.ndarray  # (k,)

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        self.d1 = np.asarray(self.d1, dtype=float)
        self.d2 = np.asarray(self.d2, dtype=float)
        k = self.H.shape[0]
        if self.H.shape != (k, k):
            raise ValueError("H must be square")
        if self.V.shape[0] != k:
            raise ValueError("V row count must match H")
        g = self.V.shape[1]
        if self.d1.shape != (g,) or self.d2.shape != (k,):
            raise ValueError("right-hand side shapes do not match the blocks")
        nonzero = np.count_nonzero(self.V, axis=1)
        if np.any(nonzero != 1) or not np.all(
            np.isin(self.V[self.V != 0.0], (-1.0, 1.0))
        ):
            raise ValueError("each row of V must have exactly one entry of -1 or +1")

    @property
    def size(self) -> int:
        return self.H.shape[0]

    @property
    def n_groups(self) -> int:
        return self.V.shape[1]

    def block_residual(self, x1: np.ndarray, x2: np.ndarray) -> float:
        r1 = self.V.T @ x2 - self.d1
        r2 = self.V @ x1 + self.H @ x2 - self.d2
        return float(max(np.max(np.abs(r1)), np.max(np.abs(r2))))


@dataclass
class SaddleSolution:
    x1: np.ndarray  # per-group biases
    x2: np.ndarray  # dual variables
    residual: float


class CholeskyFactor:
    """Lower-triangular factor with solve helpers."""

    def __init__(self, L: np.ndarray):
        self.L = L

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve M x = b via forward then backward substitution."""
        z = scipy.linalg.solve_triangular(
            self.L, b, lower=True, check_finite=False
        )
        return scipy.linalg.solve_triangular(
            self.L, z, lower=True, trans="T", check_finite=False
        )


def _locate_bad_pivot(M: np.ndarray, floor: float) -> int:
    """Column index of the first pivot at or below ``floor`` (slow path)."""
    A = np.array(M, dtype=float)
    k = A.shape[0]
    floor = max(floor, 0.0)
    for j in range(k):
        pivot = A[j, j]
        if pivot <= floor:
            return j
        root = np.sqrt(pivot)
        A[j:, j] /= root
        A[j + 1:, j + 1:] -= np.outer(A[j + 1:, j], A[j + 1:, j])
    return k - 1


def cholesky_spd(M: np.ndarray) -> CholeskyFactor:
    """Cholesky factorization of a symmetric positive-definite matrix.

    Raises :class:`FactorizationError` (with the offending pivot index) when
    a pivot is non-positive or below ``1e-12`` times the largest diagonal
    entry.
    """
    M = np.asarray(M, dtype=float)
    floor = _PIVOT_FLOOR * float(np.max(np.diagonal(M), initial=0.0))
    try:
        L = scipy.linalg.cholesky(M, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        idx = _locate_bad_pivot(M, floor)
        raise FactorizationError(
            f"matrix is not positive definite (pivot {idx})", pivot_index=idx
        ) from exc
    pivots = np.diagonal(L) ** 2
    if np.min(pivots, initial=np.inf) <= floor:
        idx = int(np.argmin(pivots))
        raise FactorizationError(
            f"pivot {idx} is {pivots[idx]:.3e}, below the tolerance "
            f"{floor:.3e}",
            pivot_index=idx,
        )
    return CholeskyFactor(L)


def solve_saddle(system: SaddleSystem, use_cholesky: bool = True) -> SaddleSolution:
    """Solve the block system through the positive-definite reformulation.

    ``use_cholesky=False`` switches both inner solves to a generic dense
    solver; the results agree to tight tolerance and the flag exists so the
    two paths can be compared.
    """
    H, V, d1, d2 = system.H, system.V, system.d1, system.d2
    rhs = np.column_stack([d2, V])
    if use_cholesky:
        solved = cholesky_spd(H).solve(rhs)
    else:
        solved = np.linalg.solve(H, rhs)
    Hinv_d2 = solved[:, 0]
    Hinv_V = solved[:, 1:]
    S = V.T @ Hinv_V
    S = (S + S.T) / 2.0
    rhs1 = V.T @ Hinv_d2 - d1
    try:
        if use_cholesky:
            x1 = cholesky_spd(S).solve(rhs1)
        else:
            x1 = np.linalg.solve(S, rhs1)
    except (FactorizationError, np.linalg.LinAlgError) as exc:
        raise DegenerateConstraintsError(
            "constraint block is rank deficient"
        ) from exc
    x2 = Hinv_d2 - Hinv_V @ x1
    return SaddleSolution(x1=x1, x2=x2, residual=system.block_residual(x1, x2))


def _indicator(task_of_sample: np.ndarray, n_tasks: int, signs: np.ndarray) -> np.ndarray:
    k = task_of_sample.shape[0]
    V = np.zeros((k, n_tasks))
    V[np.arange(k), task_of_sample] = signs
    return V


def assemble_shared_system(
    Q: np.ndarray,
    task_of_sample: np.ndarray,
    n_tasks: int,
    labels: np.ndarray,
    C: float,
    classification: bool,
) -> SaddleSystem:
    """System for the shared-factor update of a least-squares variant.

    ``Q`` is the task-coupled Gram (label-signed for classification).  The
    classification system couples biases through the labels and has an
    all-ones right-hand side; the regression system uses plain indicator
    columns and the targets as right-hand side.
    """
    task_of_sample = np.asarray(task_of_sample, dtype=int)
    labels = np.asarray(labels, dtype=float)
    if not C > 0:
        raise ValueError("C must be > 0")
    counts = np.bincount(task_of_sample, minlength=n_tasks)
    if np.any(counts == 0):
        missing = int(np.flatnonzero(counts == 0)[0])
        raise EmptyTaskError(f"task {missing} has no samples")
    H = Q + np.eye(Q.shape[0]) / C
    if classification:
        V = _indicator(task_of_sample, n_tasks, labels)
        d2 = np.ones(Q.shape[0])
    else:
        V = _indicator(task_of_sample, n_tasks, np.ones_like(labels))
        d2 = labels.copy()
    return SaddleSystem(H=H, V=V, d1=np.zeros(n_tasks), d2=d2)


def assemble_mode_row_system(
    Z: np.ndarray,
    group_of_sample: np.ndarray,
    n_groups: int,
    labels: np.ndarray,
    C: float,
    classification: bool,
) -> SaddleSystem:
    """System for one factor-row update.

    ``Z`` holds the slice features of every sample in the involved tasks,
    one row per sample; ``group_of_sample`` maps samples to the local task
    ordering of the slice (0-based, dense).
    """
    Z = np.asarray(Z, dtype=float)
    labels = np.asarray(labels, dtype=float)
    Q = Z @ Z.T
    if classification:
        Q = Q * labels[:, None] * labels[None, :]
    Q = (Q + Q.T) / 2.0
    return assemble_shared_system(
        Q, group_of_sample, n_groups, labels, C, classification
    )
