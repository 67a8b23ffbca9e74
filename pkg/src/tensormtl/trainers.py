"""Alternating training loops for the four model variants.

Each outer iteration solves the shared-factor subproblem over all samples
(a box-and-equality QP for the hinge/tube variants, a saddle system for the
least-squares variants), then sweeps the task modes: for every slice of a
mode, the matching factor row is refit from a subproblem over the samples
of the tasks in that slice.  The loop stops when the summed relative change
of the factor matrices falls below the configured threshold.

After the final sweep one extra shared-stage solve runs so that the stored
dual coefficients, biases and factors are mutually consistent; predictions
evaluate ``<u_t, latent(x)> + b_t`` in the dual form.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import MultiTaskDataset
from .errors import TensorMtlError, TrainingError
from .factors import (
    CpFactors,
    DualSharedFactor,
    complement_products,
    explicit_weights,
    init_factors,
    latent_features,
    mixing_matrix,
    ones_factors,
)
from .grid import TaskGrid
from .kernels import GramCache, KernelSpec, coupled_gram, kernel_matrix
from .linsolve import assemble_mode_row_system, assemble_shared_system, solve_saddle
from .qp import QpProblem, solve_qp, split_absolute_penalty

VARIANTS = ("tsvc", "tsvr", "tlssvc", "tlssvr")

EARLY_STOP_THRESHOLD = 1e-1


@dataclass
class TrainConfig:
    """Hyperparameters and loop controls for one training run.

    ``early_stop`` overrides ``stop_threshold`` with the relaxed value
    ``1e-1``.  ``freeze_factors`` pins all factor matrices at ones and skips
    the sweeps, which reduces a one-task grid to a plain single-task model.
    ``qp_max_iter=None`` scales the pair-update budget with the subproblem
    size.
    """

    variant: str
    C: float
    rank: int
    kernel: KernelSpec = field(default_factory=KernelSpec)
    epsilon: float = 0.1
    stop_threshold: float = 1e-3
    early_stop: bool = False
    max_outer_iters: int = 50
    seed: int = 0
    qp_tol: float = 1e-6
    qp_max_iter: int | None = None
    freeze_factors: bool = False
    threads: int = 1
    use_cholesky: bool = True

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(
                f"unknown variant {self.variant!r}; expected one of {VARIANTS}"
            )
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not 0.0 < self.stop_threshold < 1.0:
            raise ValueError("stop_threshold must lie in (0, 1)")
        if self.max_outer_iters < 0:
            raise ValueError("max_outer_iters must be >= 0")

    @property
    def classification(self) -> bool:
        return self.variant in ("tsvc", "tlssvc")

    @property
    def least_squares(self) -> bool:
        return self.variant in ("tlssvc", "tlssvr")

    @property
    def effective_stop_threshold(self) -> float:
        return EARLY_STOP_THRESHOLD if self.early_stop else self.stop_threshold

    def pair_budget(self, n_variables: int) -> int:
        if self.qp_max_iter is not None:
            return self.qp_max_iter
        return max(100_000, 300 * n_variables)


@dataclass
class ConvergenceTrace:
    relative_errors: list = field(default_factory=list)
    iteration_seconds: list = field(default_factory=list)
    subproblem_residuals: list = field(default_factory=list)
    shared_objectives: list = field(default_factory=list)
    gram_seconds: float = 0.0
    assembly_seconds: float = 0.0
    solve_seconds: float = 0.0
    total_seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.relative_errors)

    def timing_breakdown(self) -> dict:
        return {
            "gram_seconds": self.gram_seconds,
            "assembly_seconds": self.assembly_seconds,
            "solve_seconds": self.solve_seconds,
            "total_seconds": self.total_seconds,
        }


@dataclass
class TrainedModel:
    grid: TaskGrid
    kernel: KernelSpec
    factors: CpFactors
    dual: DualSharedFactor
    biases: np.ndarray
    variant: str
    meta: dict = field(default_factory=dict)

    @property
    def classification(self) -> bool:
        return self.variant in ("tsvc", "tlssvc")


def carry_duals(previous, lower, upper):
    """Warm-start carry: previous duals clipped into the new box.

    ``None`` (first iteration) stays ``None``, which means a zero start.
    The solver re-projects onto the equality constraints afterwards.
    """
    if previous is None:
        return None
    return np.clip(np.asarray(previous, dtype=float), lower, upper)


class _Clock:
    def __init__(self, trace: ConvergenceTrace, attr: str):
        self.trace = trace
        self.attr = attr

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        setattr(
            self.trace,
            self.attr,
            getattr(self.trace, self.attr) + time.perf_counter() - self.t0,
        )
        return False


def _relative_error(new: CpFactors, old: CpFactors) -> float:
    total = 0.0
    for fn, fo in zip(new.factors, old.factors):
        num = float(np.sum((fn - fo) ** 2))
        denom = float(np.sum(fo ** 2))
        if denom == 0.0:
            total += 0.0 if num == 0.0 else np.inf
        else:
            total += num / denom
    return total


def _solve_box_qp(problem: QpProblem, cfg: TrainConfig, warm):
    x0 = carry_duals(warm, problem.lower, problem.upper)
    return solve_qp(
        problem,
        tol=cfg.qp_tol,
        max_iter=cfg.pair_budget(problem.n),
        x0=x0,
    )


def _solve_shared_stage(ds, cfg: TrainConfig, gram, factors, state, trace):
    """Refit the shared factor; returns the per-anchor coefficients.

    Coefficients are already label-signed where applicable, i.e. the dual
    representation's weights in ``sum_a coeff_a phi(x_a) u_{q_a}^T``.
    """
    mixing = mixing_matrix(factors, ds.grid)
    T = ds.grid.total
    with _Clock(trace, "assembly_seconds"):
        if cfg.classification:
            Q = coupled_gram(gram.matrix, mixing, ds.task_of_sample, labels=ds.y)
        else:
            Q = coupled_gram(gram.matrix, mixing, ds.task_of_sample)
    residual = 0.0
    objective = None
    if cfg.least_squares:
        with _Clock(trace, "assembly_seconds"):
            system = assemble_shared_system(
                Q, ds.task_of_sample, T, ds.y, cfg.C, cfg.classification
            )
        with _Clock(trace, "solve_seconds"):
            sol = solve_saddle(system, use_cholesky=cfg.use_cholesky)
        residual = sol.residual
        biases = sol.x1
        duals = sol.x2
        coeffs = duals * ds.y if cfg.classification else duals
    elif cfg.classification:
        problem = QpProblem(
            Q=Q,
            c=np.ones(ds.n_samples),
            a=ds.y,
            groups=ds.task_of_sample,
            lower=np.zeros(ds.n_samples),
            upper=np.full(ds.n_samples, cfg.C),
        )
        with _Clock(trace, "solve_seconds"):
            sol = solve_qp(
                problem,
                tol=cfg.qp_tol,
                max_iter=cfg.pair_budget(problem.n),
                x0=carry_duals(state.get("shared"), problem.lower, problem.upper),
            )
        state["shared"] = sol.x.copy()
        residual = sol.kkt_residual
        objective = sol.objective
        biases = sol.group_multipliers
        coeffs = sol.x * ds.y
    else:
        with _Clock(trace, "assembly_seconds"):
            split = split_absolute_penalty(
                Q, ds.y, cfg.epsilon, cfg.C, ds.task_of_sample
            )
        with _Clock(trace, "solve_seconds"):
            sol = solve_qp(
                split.problem,
                tol=cfg.qp_tol,
                max_iter=cfg.pair_budget(split.problem.n),
                x0=carry_duals(
                    state.get("shared"), split.problem.lower, split.problem.upper
                ),
            )
        state["shared"] = sol.x.copy()
        residual = sol.kkt_residual
        objective = sol.objective
        biases = sol.group_multipliers
        coeffs = split.merge(sol.x)
    return coeffs, biases, mixing, residual, objective


def _latent_for_training(ds, gram, coeffs, mixing):
    """(m, R) latent features of every training sample under the dual form."""
    nz = np.flatnonzero(coeffs)
    if nz.size == 0:
        return np.zeros((ds.n_samples, mixing.shape[1]))
    weights = coeffs[nz, None] * mixing[ds.task_of_sample[nz]]
    return gram.matrix[:, nz] @ weights


def _solve_mode_row(ds, cfg, latent, comp, tasks_in, state, key):
    """Refit one factor row; returns (row, slice biases, residual)."""
    sel = np.concatenate(
        [np.arange(ds.offsets[t], ds.offsets[t + 1]) for t in tasks_in]
    )
    group_of = np.searchsorted(tasks_in, ds.task_of_sample[sel])
    Z = latent[sel] * comp[ds.task_of_sample[sel]]
    y_sel = ds.y[sel]
    n_groups = len(tasks_in)
    if cfg.least_squares:
        system = assemble_mode_row_system(
            Z, group_of, n_groups, y_sel, cfg.C, cfg.classification
        )
        sol = solve_saddle(system, use_cholesky=cfg.use_cholesky)
        duals = sol.x2
        row = (duals * y_sel) @ Z if cfg.classification else duals @ Z
        return row, sol.x1, sol.residual
    Qz = Z @ Z.T
    Qz = (Qz + Qz.T) / 2.0
    if cfg.classification:
        Qz = Qz * y_sel[:, None] * y_sel[None, :]
        problem = QpProblem(
            Q=Qz,
            c=np.ones(sel.size),
            a=y_sel,
            groups=group_of,
            lower=np.zeros(sel.size),
            upper=np.full(sel.size, cfg.C),
        )
        sol = _solve_box_qp(problem, cfg, state.get(key))
        state[key] = sol.x.copy()
        row = (sol.x * y_sel) @ Z
        return row, sol.group_multipliers, sol.kkt_residual
    split = split_absolute_penalty(Qz, y_sel, cfg.epsilon, cfg.C, group_of)
    sol = _solve_box_qp(split.problem, cfg, state.get(key))
    state[key] = sol.x.copy()
    duals = split.merge(sol.x)
    row = duals @ Z
    return row, sol.group_multipliers, sol.kkt_residual


def train(
    dataset: MultiTaskDataset,
    cfg: TrainConfig,
    gram: GramCache | None = None,
):
    """Run the alternating loop; returns ``(TrainedModel, ConvergenceTrace)``.

    ``gram`` may carry a precomputed kernel cache for the dataset (reused
    across CV cells); otherwise one is built here.

    With ``max_outer_iters=0`` the sweep loop is skipped entirely but the
    shared stage still runs once, so the model is well formed with its
    initial factors.
    """
    if cfg.classification and dataset.kind != "classification":
        raise TensorMtlError(
            f"variant {cfg.variant!r} needs -1/+1 labels; "
            f"dataset kind is {dataset.kind!r}"
        )
    trace = ConvergenceTrace()
    t_total = time.perf_counter()
    grid = dataset.grid
    if cfg.freeze_factors:
        factors = ones_factors(grid, cfg.rank)
    else:
        factors = init_factors(grid, cfg.rank, cfg.seed)
    if gram is None:
        with _Clock(trace, "gram_seconds"):
            gram = dataset.gram(cfg.kernel)
    state: dict = {}
    previous = factors.copy()
    threshold = cfg.effective_stop_threshold

    try:
        for _ in range(cfg.max_outer_iters):
            t_iter = time.perf_counter()
            coeffs, biases, mixing, res_shared, objective = _solve_shared_stage(
                dataset, cfg, gram, factors, state, trace
            )
            worst_residual = res_shared
            if not cfg.freeze_factors:
                with _Clock(trace, "assembly_seconds"):
                    latent = _latent_for_training(dataset, gram, coeffs, mixing)
                for mode in range(1, grid.nmodes + 1):
                    comp = complement_products(factors, grid, mode)
                    slices = range(1, grid.shape[mode - 1] + 1)
                    task_lists = [
                        grid.mode_slice_tasks(mode, s) for s in slices
                    ]

                    def solve_one(args):
                        s, tasks_in = args
                        return _solve_mode_row(
                            dataset, cfg, latent, comp, tasks_in, state,
                            ("row", mode, s),
                        )

                    jobs = list(zip(slices, task_lists))
                    with _Clock(trace, "solve_seconds"):
                        if cfg.threads > 1:
                            with ThreadPoolExecutor(cfg.threads) as pool:
                                results = list(pool.map(solve_one, jobs))
                        else:
                            results = [solve_one(j) for j in jobs]
                    # Commit in slice order regardless of solve order.
                    for (s, tasks_in), (row, slice_biases, res) in zip(
                        jobs, results
                    ):
                        factors.factors[mode - 1][s - 1] = row
                        biases[tasks_in] = slice_biases
                        worst_residual = max(worst_residual, res)
            re = _relative_error(factors, previous)
            previous = factors.copy()
            trace.relative_errors.append(re)
            trace.subproblem_residuals.append(worst_residual)
            trace.shared_objectives.append(objective)
            trace.iteration_seconds.append(time.perf_counter() - t_iter)
            if re < threshold:
                break
        # Consistency solve: dual coefficients and biases match the final
        # factors, so both prediction forms use one coherent solution.
        coeffs, biases, mixing, res_final, _ = _solve_shared_stage(
            dataset, cfg, gram, factors, state, trace
        )
    except TensorMtlError as exc:
        trace.total_seconds = time.perf_counter() - t_total
        raise TrainingError(f"training failed: {exc}", trace=trace) from exc

    keep = np.flatnonzero(coeffs) if not cfg.least_squares else np.arange(
        dataset.n_samples
    )
    if keep.size == 0:
        keep = np.array([0])
    dual = DualSharedFactor(
        anchors=dataset.X[keep],
        anchor_tasks=dataset.task_of_sample[keep],
        coeffs=coeffs[keep],
        kernel=cfg.kernel,
    )
    trace.total_seconds = time.perf_counter() - t_total
    model = TrainedModel(
        grid=grid,
        kernel=cfg.kernel,
        factors=factors,
        dual=dual,
        biases=np.asarray(biases, dtype=float),
        variant=cfg.variant,
        meta={
            "iterations": trace.iterations,
            "final_relative_error": (
                trace.relative_errors[-1] if trace.relative_errors else None
            ),
            "stop_threshold": threshold,
            "final_shared_residual": res_final,
            "seed": cfg.seed,
            "C": cfg.C,
            "rank": cfg.rank,
            "epsilon": cfg.epsilon,
            "freeze_factors": cfg.freeze_factors,
        },
    )
    return model, trace


def decision_function(
    model: TrainedModel,
    X: np.ndarray,
    task_ids,
    explicit: bool = False,
) -> np.ndarray:
    """Raw decision values for samples assigned to tasks.

    ``explicit=True`` routes linear-kernel models through materialized
    weight vectors instead of the kernel expansion; both paths agree to
    tight tolerance.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    task_ids = np.atleast_1d(np.asarray(task_ids, dtype=int))
    if task_ids.size == 1 and X.shape[0] > 1:
        task_ids = np.full(X.shape[0], int(task_ids[0]))
    if task_ids.shape[0] != X.shape[0]:
        raise TensorMtlError("one task id per sample is required")
    if np.any(task_ids < 0) or np.any(task_ids >= model.grid.total):
        raise TensorMtlError("task id outside the grid")
    if explicit:
        W = explicit_weights(model.dual, model.factors, model.grid)
        raw = np.einsum("nd,nd->n", X, W[task_ids])
    else:
        latent = latent_features(model.dual, model.factors, model.grid, X)
        rows = mixing_matrix(model.factors, model.grid)[task_ids]
        raw = np.sum(latent * rows, axis=1)
    return raw + model.biases[task_ids]


def predict(model: TrainedModel, x: np.ndarray, t: int):
    """Predict one sample of task ``t``.

    Returns a float for regression variants, -1/+1 for classification.
    """
    raw = float(decision_function(model, np.atleast_2d(x), np.array([t]))[0])
    if model.classification:
        return 1 if raw >= 0.0 else -1
    return raw


def predict_batch(model: TrainedModel, X: np.ndarray, task_ids) -> np.ndarray:
    raw = decision_function(model, X, task_ids)
    if model.classification:
        return np.where(raw >= 0.0, 1.0, -1.0)
    return raw
