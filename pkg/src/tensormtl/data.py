"""Datasets: container type, synthetic generation, CSV files, k-fold CV.

Dataset CSV contract
--------------------
Header row ``t1,...,tN,label,f1,...,fd``; one sample per row; task indices
are 1-based integers per mode; the label is a real number for regression or
a +-1 integer for classification; UTF-8, comma separated, ``.`` decimal
point.  Flat task ids derive from the multi-index columns through the
grid's first-index-fastest layout.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DatasetFormatError, EmptyTaskError
from .factors import CpFactors
from .grid import TaskGrid
from .kernels import GramCache, KernelSpec

PROBLEM_KINDS = ("classification", "regression")


@dataclass
class MultiTaskDataset:
    """Per-task sample blocks, stored concatenated and grouped by task.

    Rows are ordered by flat task id; ``offsets[t]:offsets[t+1]`` addresses
    task ``t``'s block.  Every task must be present with at least one
    sample.  Classification labels are -1/+1.
    """

    grid: TaskGrid
    X: np.ndarray
    y: np.ndarray
    task_of_sample: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        self.task_of_sample = np.asarray(self.task_of_sample, dtype=int)
        m = self.X.shape[0]
        if self.y.shape != (m,) or self.task_of_sample.shape != (m,):
            raise ValueError("X, y and task ids disagree on the sample count")
        if m == 0:
            raise EmptyTaskError("dataset has no samples")
        if self.task_of_sample.min() < 0 or self.task_of_sample.max() >= self.grid.total:
            raise ValueError("task ids outside the grid")
        # Regroup rows by task so the block offsets are meaningful.
        order = np.argsort(self.task_of_sample, kind="stable")
        if not np.array_equal(order, np.arange(m)):
            self.X = self.X[order]
            self.y = self.y[order]
            self.task_of_sample = self.task_of_sample[order]
        counts = np.bincount(self.task_of_sample, minlength=self.grid.total)
        if np.any(counts == 0):
            missing = int(np.flatnonzero(counts == 0)[0])
            raise EmptyTaskError(f"task {missing} has no samples")
        self.offsets = np.concatenate([[0], np.cumsum(counts)])
        if self.kind == "classification" and not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("classification labels must be -1 or +1")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def task_block(self, t: int):
        lo, hi = self.offsets[t], self.offsets[t + 1]
        return self.X[lo:hi], self.y[lo:hi]

    def subset(self, idx: np.ndarray) -> "MultiTaskDataset":
        idx = np.asarray(idx, dtype=int)
        return MultiTaskDataset(
            self.grid, self.X[idx], self.y[idx], self.task_of_sample[idx], self.kind
        )

    def gram(self, kernel: KernelSpec) -> GramCache:
        return GramCache(kernel, self.X, offsets=self.offsets)


def from_task_blocks(grid: TaskGrid, blocks, kind: str) -> MultiTaskDataset:
    """Build a dataset from a list of per-task ``(X_t, y_t)`` pairs."""
    if len(blocks) != grid.total:
        raise ValueError(f"expected {grid.total} blocks, got {len(blocks)}")
    X = np.concatenate([np.atleast_2d(b[0]) for b in blocks], axis=0)
    y = np.concatenate([np.asarray(b[1], dtype=float) for b in blocks])
    tasks = np.concatenate(
        [np.full(len(b[1]), t, dtype=int) for t, b in enumerate(blocks)]
    )
    return MultiTaskDataset(grid, X, y, tasks, kind)


@dataclass(frozen=True)
class SynthConfig:
    shape: tuple
    d: int
    rank: int
    m_train: int
    m_test: int
    snr_db: float | None
    kind: str
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        for name in ("d", "rank", "m_train", "m_test"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if self.snr_db is not None and not math.isfinite(self.snr_db):
            object.__setattr__(self, "snr_db", None)

    @property
    def noiseless(self) -> bool:
        return self.snr_db is None


@dataclass
class GroundTruth:
    """Generator-side truth for oracle checks."""

    weights: np.ndarray       # (T, d)
    biases: np.ndarray        # (T,)
    shared: np.ndarray        # (d, R)
    factors: CpFactors


def _noise_scale(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> float:
    """Scale sigma so that 20*log10(var(clean) / var(sigma * noise)) == snr_db.

    Solved with the sample variances of both draws, which makes the measured
    ratio reproduce the request exactly.
    """
    ratio = 10.0 ** (snr_db / 20.0)
    var_noise = float(np.var(noise))
    if var_noise == 0.0:
        return 0.0
    return math.sqrt(float(np.var(clean)) / (ratio * var_noise))


def generate_synthetic(cfg: SynthConfig):
    """Draw a train/test pair from a planted low-rank task model.

    The per-task weights come from a rank-``cfg.rank`` model: a shared
    (d, R) matrix combined by per-task mixing vectors, all entries standard
    normal.  Features and raw noise are standard normal as well; the noise
    is rescaled per task block to hit ``cfg.snr_db`` exactly, measured as
    ``20*log10(var(clean)/var(noise))``.  Classification thresholds the
    noisy response at zero (ties go to +1).

    Returns ``(train, test, truth)``.
    """
    grid = TaskGrid(tuple(cfg.shape))
    rng = np.random.default_rng(cfg.seed)
    shared = rng.standard_normal((cfg.d, cfg.rank))
    factors = CpFactors(
        cfg.rank,
        [rng.standard_normal((size, cfg.rank)) for size in grid.shape],
        cfg.seed,
    )
    from .factors import mixing_matrix  # local import avoids a cycle at module load

    mixing = mixing_matrix(factors, grid)
    weights = mixing @ shared.T  # (T, d)
    biases = rng.standard_normal(grid.total)

    def draw_block(t: int, m: int):
        X = rng.standard_normal((m, cfg.d))
        clean = X @ weights[t] + biases[t]
        if cfg.noiseless:
            noisy = clean
        else:
            xi = rng.standard_normal(m)
            noisy = clean + _noise_scale(clean, xi, cfg.snr_db) * xi
        if cfg.kind == "classification":
            ylab = np.where(noisy >= 0.0, 1.0, -1.0)
        else:
            ylab = noisy
        return X, ylab

    train_blocks = []
    test_blocks = []
    for t in range(grid.total):
        train_blocks.append(draw_block(t, cfg.m_train))
        test_blocks.append(draw_block(t, cfg.m_test))
    train = from_task_blocks(grid, train_blocks, cfg.kind)
    test = from_task_blocks(grid, test_blocks, cfg.kind)
    truth = GroundTruth(weights=weights, biases=biases, shared=shared, factors=factors)
    return train, test, truth


# --- CSV files ---------------------------------------------------------------


def _format_value(v: float) -> str:
    return repr(float(v))


def save_csv(dataset: MultiTaskDataset, path) -> None:
    grid = dataset.grid
    multi = grid.multi_indices()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = [f"t{n + 1}" for n in range(grid.nmodes)]
        header.append("label")
        header.extend(f"f{j + 1}" for j in range(dataset.n_features))
        writer.writerow(header)
        for i in range(dataset.n_samples):
            t = dataset.task_of_sample[i]
            row = [str(int(v)) for v in multi[t]]
            if dataset.kind == "classification":
                row.append(str(int(dataset.y[i])))
            else:
                row.append(_format_value(dataset.y[i]))
            row.extend(_format_value(v) for v in dataset.X[i])
            writer.writerow(row)


def load_csv(path, grid: TaskGrid, kind: str) -> MultiTaskDataset:
    """Parse a dataset CSV against the given grid and problem kind.

    Each contract violation raises :class:`DatasetFormatError` with the
    offending 1-based line number.
    """
    if kind not in PROBLEM_KINDS:
        raise ValueError(f"unknown problem kind {kind!r}")
    nmodes = grid.nmodes
    rows_X: list[list[float]] = []
    rows_y: list[float] = []
    rows_t: list[int] = []
    n_features = None
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty dataset file", line=1) from None
        expected_prefix = [f"t{n + 1}" for n in range(nmodes)] + ["label"]
        if [h.strip() for h in header[: nmodes + 1]] != expected_prefix:
            raise DatasetFormatError(
                f"header must start with {','.join(expected_prefix)}", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if n_features is None:
                n_features = len(row) - nmodes - 1
                if n_features < 1:
                    raise DatasetFormatError(
                        "rows need at least one feature column", line=lineno
                    )
            if len(row) != nmodes + 1 + n_features:
                raise DatasetFormatError(
                    f"expected {nmodes + 1 + n_features} columns, got {len(row)}",
                    line=lineno,
                )
            multi = []
            for n in range(nmodes):
                cell = row[n].strip()
                try:
                    multi.append(int(cell))
                except ValueError:
                    raise DatasetFormatError(
                        f"task index {cell!r} is not an integer", line=lineno
                    ) from None
                if not 1 <= multi[-1] <= grid.shape[n]:
                    raise DatasetFormatError(
                        f"mode {n + 1} index {multi[-1]} outside "
                        f"[1, {grid.shape[n]}]",
                        line=lineno,
                    )
            try:
                label = float(row[nmodes].strip())
            except ValueError:
                raise DatasetFormatError(
                    f"label {row[nmodes]!r} is not numeric", line=lineno
                ) from None
            if kind == "classification" and label not in (-1.0, 1.0):
                raise DatasetFormatError(
                    f"classification label must be -1 or +1, got {row[nmodes]}",
                    line=lineno,
                )
            try:
                feats = [float(c) for c in row[nmodes + 1:]]
            except ValueError:
                raise DatasetFormatError(
                    "non-numeric feature cell", line=lineno
                ) from None
            rows_t.append(grid.linearize(multi))
            rows_y.append(label)
            rows_X.append(feats)
    if not rows_X:
        raise DatasetFormatError("dataset file has a header but no samples")
    return MultiTaskDataset(
        grid, np.array(rows_X), np.array(rows_y), np.array(rows_t), kind
    )


# --- cross-validation ---------------------------------------------------------


def make_folds(dataset: MultiTaskDataset, k: int, seed: int) -> list[np.ndarray]:
    """Task-stratified fold assignment.

    Every task's samples are shuffled and dealt round-robin, so fold sizes
    within a task differ by at most one.  Tasks with fewer than two samples
    stay in every training fold (there is nothing to hold out safely).
    Returns one array of validation indices per fold.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for t in range(dataset.grid.total):
        lo, hi = dataset.offsets[t], dataset.offsets[t + 1]
        if hi - lo < 2:
            continue
        order = rng.permutation(hi - lo) + lo
        for pos, idx in enumerate(order):
            folds[pos % k].append(int(idx))
    return [np.array(sorted(f), dtype=int) for f in folds]


def config_grid(base, C_values=None, rank_values=None, gamma_values=None,
                epsilon_values=None):
    """All combinations of the given hyperparameter values over ``base``.

    ``base`` is a TrainConfig; ``None`` for a dimension keeps the base value.
    Cells are ordered with C varying fastest, then rank, then gamma, then
    epsilon.
    """
    C_values = [base.C] if C_values is None else list(C_values)
    rank_values = [base.rank] if rank_values is None else list(rank_values)
    gamma_values = (
        [base.kernel.rbf_gamma] if gamma_values is None else list(gamma_values)
    )
    epsilon_values = (
        [base.epsilon] if epsilon_values is None else list(epsilon_values)
    )
    cells = []
    for eps, gamma, rank, C in itertools.product(
        epsilon_values, gamma_values, rank_values, C_values
    ):
        kernel = (
            KernelSpec("rbf", rbf_gamma=gamma)
            if base.kernel.kind == "rbf"
            else base.kernel
        )
        cells.append(
            replace(base, C=float(C), rank=int(rank), kernel=kernel,
                    epsilon=float(eps))
        )
    return cells


def kfold_cv(dataset: MultiTaskDataset, configs, k: int, seed: int,
             threads: int = 1):
    """Score every config by k-fold cross-validation and pick the best.

    The score is mean validation RMSE for regression (lower is better) or
    mean validation accuracy for classification (higher is better).  Ties
    break toward smaller rank, then smaller C.

    Returns ``(best_config, results)`` where ``results`` is a list of dicts
    with the config, its per-fold scores and the mean score.
    """
    from .metrics import classification_report, regression_report
    from .trainers import decision_function, train

    configs = list(configs)
    if not configs:
        raise ValueError("empty config grid")
    folds = make_folds(dataset, k, seed)
    all_idx = np.arange(dataset.n_samples)
    splits = []
    for f in folds:
        train_idx = np.setdiff1d(all_idx, f)
        splits.append((train_idx, f))

    # Kernel values do not depend on C/rank/epsilon, so one cache per kernel
    # serves every cell sharing it.
    caches: dict = {}

    def cache_for(kernel: KernelSpec) -> GramCache:
        if kernel not in caches:
            caches[kernel] = GramCache(kernel, dataset.X)
        return caches[kernel]

    def score_cell(cfg):
        full = cache_for(cfg.kernel)
        fold_scores = []
        for train_idx, val_idx in splits:
            sub = dataset.subset(train_idx)
            gram = full.subset(train_idx, offsets=sub.offsets)
            model, _ = train(sub, cfg, gram=gram)
            raw = decision_function(
                model, dataset.X[val_idx], dataset.task_of_sample[val_idx]
            )
            truth = dataset.y[val_idx]
            if dataset.kind == "classification":
                pred = np.where(raw >= 0.0, 1.0, -1.0)
                fold_scores.append(classification_report(truth, pred).accuracy)
            else:
                fold_scores.append(regression_report(truth, raw).rmse)
        return fold_scores

    if threads > 1:
        # Pre-build caches serially; cells only read them afterwards.
        for cfg in configs:
            cache_for(cfg.kernel)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            all_scores = list(pool.map(score_cell, configs))
    else:
        all_scores = [score_cell(cfg) for cfg in configs]

    results = []
    for cfg, scores in zip(configs, all_scores):
        results.append(
            {"config": cfg, "fold_scores": scores, "score": float(np.mean(scores))}
        )
    higher_better = dataset.kind == "classification"

    def sort_key(r):
        primary = -r["score"] if higher_better else r["score"]
        return (primary, r["config"].rank, r["config"].C)

    best = min(results, key=sort_key)
    return best["config"], results
