"""Control models: independent per-task fits and one pooled fit.

These bracket the sharing spectrum.  The independent baseline trains one
standard SVC/SVR/LSSVC/LSSVR per task with no coupling; the pooled baseline
concatenates every task into one and ignores the task id at prediction
time.  Both reuse the subproblem solvers directly on plain kernel Grams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import MultiTaskDataset
from .errors import TensorMtlError
from .grid import TaskGrid
from .kernels import KernelSpec, kernel_matrix
from .linsolve import assemble_shared_system, solve_saddle
from .qp import QpProblem, solve_qp, split_absolute_penalty
from .trainers import VARIANTS

BASELINE_KINDS = ("independent", "pooled")


@dataclass
class BaselineModel:
    kind: str
    variant: str
    kernel: KernelSpec
    grid: TaskGrid
    anchors: np.ndarray
    anchor_tasks: np.ndarray
    coeffs: np.ndarray
    biases: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.anchor_tasks = np.asarray(self.anchor_tasks, dtype=int)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        self.biases = np.atleast_1d(np.asarray(self.biases, dtype=float))

    @property
    def classification(self) -> bool:
        return self.variant in ("tsvc", "tlssvc")


def _fit_single(X, y, C, kernel, variant, qp_tol, qp_max_iter, epsilon):
    """One standard single-task model; returns (coeffs, bias)."""
    K = kernel_matrix(kernel, X, X)
    K = (K + K.T) / 2.0
    m = y.shape[0]
    groups = np.zeros(m, dtype=int)
    if variant == "tsvc":
        Q = K * y[:, None] * y[None, :]
        problem = QpProblem(
            Q=Q, c=np.ones(m), a=y, groups=groups,
            lower=np.zeros(m), upper=np.full(m, C),
        )
        sol = solve_qp(problem, tol=qp_tol, max_iter=qp_max_iter)
        return sol.x * y, float(sol.group_multipliers[0])
    if variant == "tsvr":
        split = split_absolute_penalty(K, y, epsilon, C, groups)
        sol = solve_qp(split.problem, tol=qp_tol, max_iter=qp_max_iter)
        return split.merge(sol.x), float(sol.group_multipliers[0])
    classification = variant == "tlssvc"
    if classification:
        Q = K * y[:, None] * y[None, :]
    else:
        Q = K
    system = assemble_shared_system(Q, groups, 1, y, C, classification)
    sol = solve_saddle(system)
    coeffs = sol.x2 * y if classification else sol.x2
    return coeffs, float(sol.x1[0])


def _check_variant(variant: str):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def train_independent(
    dataset: MultiTaskDataset,
    C: float,
    kernel: KernelSpec,
    variant: str,
    qp_tol: float = 1e-6,
    epsilon: float = 0.1,
) -> BaselineModel:
    """One standard model per task, no sharing."""
    _check_variant(variant)
    coeff_parts = []
    biases = np.zeros(dataset.grid.total)
    for t in range(dataset.grid.total):
        Xt, yt = dataset.task_block(t)
        budget = max(100_000, 300 * 2 * yt.shape[0])
        coeffs, bias = _fit_single(
            Xt, yt, C, kernel, variant, qp_tol, budget, epsilon
        )
        coeff_parts.append(coeffs)
        biases[t] = bias
    return BaselineModel(
        kind="independent",
        variant=variant,
        kernel=kernel,
        grid=dataset.grid,
        anchors=dataset.X,
        anchor_tasks=dataset.task_of_sample,
        coeffs=np.concatenate(coeff_parts),
        biases=biases,
    )


def train_pooled(
    dataset: MultiTaskDataset,
    C: float,
    kernel: KernelSpec,
    variant: str,
    qp_tol: float = 1e-6,
    epsilon: float = 0.1,
) -> BaselineModel:
    """One model over the concatenation of all tasks."""
    _check_variant(variant)
    budget = max(100_000, 300 * 2 * dataset.n_samples)
    coeffs, bias = _fit_single(
        dataset.X, dataset.y, C, kernel, variant, qp_tol, budget, epsilon
    )
    return BaselineModel(
        kind="pooled",
        variant=variant,
        kernel=kernel,
        grid=dataset.grid,
        anchors=dataset.X,
        anchor_tasks=dataset.task_of_sample,
        coeffs=coeffs,
        biases=np.array([bias]),
    )


def baseline_decision(model: BaselineModel, X: np.ndarray, task_ids) -> np.ndarray:
    """Raw decision values.  Pooled models ignore the task id."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    task_ids = np.atleast_1d(np.asarray(task_ids, dtype=int))
    if task_ids.size == 1 and X.shape[0] > 1:
        task_ids = np.full(X.shape[0], int(task_ids[0]))
    if task_ids.shape[0] != X.shape[0]:
        raise TensorMtlError("one task id per sample is required")
    K = kernel_matrix(model.kernel, X, model.anchors)
    if model.kind == "pooled":
        return K @ model.coeffs + model.biases[0]
    out = np.empty(X.shape[0])
    for t in np.unique(task_ids):
        rows = task_ids == t
        cols = model.anchor_tasks == t
        out[rows] = K[np.ix_(rows, cols)] @ model.coeffs[cols] + model.biases[t]
    return out


def baseline_predict(model: BaselineModel, X: np.ndarray, task_ids) -> np.ndarray:
    raw = baseline_decision(model, X, task_ids)
    if model.classification:
        return np.where(raw >= 0.0, 1.0, -1.0)
    return raw
