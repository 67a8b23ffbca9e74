"""Per-mode factor matrices and the dual form of the shared factor.

Every task ``t`` with multi-index ``(t_1, ..., t_N)`` owns a mixing vector
``u_t`` of length R, the elementwise product of one row from each mode
factor.  The shared factor couples those mixing vectors to a common set of
R latent directions; under nonlinear kernels it only exists in dual form,
as a weighted sum of feature-mapped anchor samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidIndexError, UnsupportedKernelError
from .grid import TaskGrid
from .kernels import KernelSpec, kernel_matrix


@dataclass
class CpFactors:
    """Rank-R factor matrices, one per task mode.

    ``factors[n]`` has shape ``(T_{n+1}, rank)``.  Entries must stay finite;
    trainers overwrite rows in place during sweeps.
    """

    rank: int
    factors: list[np.ndarray]
    seed: int | None = None

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        self.factors = [np.asarray(f, dtype=float) for f in self.factors]
        for n, f in enumerate(self.factors):
            if f.ndim != 2 or f.shape[1] != self.rank:
                raise ValueError(
                    f"factor {n} has shape {f.shape}, expected (*, {self.rank})"
                )
            if not np.all(np.isfinite(f)):
                raise ValueError(f"factor {n} contains non-finite entries")

    def copy(self) -> "CpFactors":
        return CpFactors(self.rank, [f.copy() for f in self.factors], self.seed)

    def check_grid(self, grid: TaskGrid) -> None:
        if len(self.factors) != grid.nmodes:
            raise ValueError(
                f"{len(self.factors)} factors for a {grid.nmodes}-mode grid"
            )
        for n, (f, size) in enumerate(zip(self.factors, grid.shape)):
            if f.shape[0] != size:
                raise ValueError(
                    f"factor {n} has {f.shape[0]} rows, mode size is {size}"
                )


def init_factors(grid: TaskGrid, rank: int, seed: int) -> CpFactors:
    """Draw i.i.d. standard-normal factors from a seeded generator."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    rng = np.random.default_rng(seed)
    mats = [rng.standard_normal((size, rank)) for size in grid.shape]
    return CpFactors(rank, mats, seed)


def ones_factors(grid: TaskGrid, rank: int) -> CpFactors:
    """All-ones factors; used when factor updates are frozen."""
    return CpFactors(rank, [np.ones((size, rank)) for size in grid.shape])


def mixing_matrix(factors: CpFactors, grid: TaskGrid) -> np.ndarray:
    """(T, R) matrix whose row ``t`` is the mixing vector of task ``t``."""
    factors.check_grid(grid)
    multi = grid.multi_indices()
    out = np.ones((grid.total, factors.rank))
    for n, f in enumerate(factors.factors):
        out *= f[multi[:, n] - 1, :]
    return out


def mixing_vector(t: int, factors: CpFactors, grid: TaskGrid) -> np.ndarray:
    """Mixing vector of a single task (elementwise product across modes)."""
    factors.check_grid(grid)
    multi = grid.delinearize(t)
    out = np.ones(factors.rank)
    for n, f in enumerate(factors.factors):
        out *= f[multi[n] - 1, :]
    return out


def relatedness_gram(factors: CpFactors, grid: TaskGrid) -> np.ndarray:
    """T x T matrix of pairwise mixing-vector inner products.

    Always symmetric positive semidefinite (it is a Gram matrix).
    """
    g = mixing_matrix(factors, grid)
    gram = g @ g.T
    return (gram + gram.T) / 2.0


@dataclass
class DualSharedFactor:
    """Dual representation of the shared factor.

    The shared factor is the sum over anchors of
    ``coeff_a * phi(x_a) u_{q_a}^T`` where ``q_a`` is the anchor's task and
    ``u_{q_a}`` is taken from whatever factors are passed to
    :func:`latent_features`.  Anchors and coefficients must align.
    """

    anchors: np.ndarray       # (A, d) anchor feature rows
    anchor_tasks: np.ndarray  # (A,) flat task ids
    coeffs: np.ndarray        # (A,)
    kernel: KernelSpec = field(default_factory=KernelSpec)

    def __post_init__(self):
        self.anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        self.anchor_tasks = np.asarray(self.anchor_tasks, dtype=int)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.anchors.shape[0] != self.coeffs.shape[0]:
            raise ValueError("anchors and coeffs must have equal length")
        if self.anchor_tasks.shape[0] != self.coeffs.shape[0]:
            raise ValueError("anchor task ids and coeffs must have equal length")

    def __len__(self) -> int:
        return int(self.coeffs.shape[0])


def latent_features(
    dual: DualSharedFactor,
    factors: CpFactors,
    grid: TaskGrid,
    x: np.ndarray,
    anchor_kernel: np.ndarray | None = None,
) -> np.ndarray:
    """Project samples onto the R shared latent directions via the dual form.

    For a single sample this is ``sum_a coeff_a * u_{q_a} * k(x_a, x)``.

    Parameters
    ----------
    x : (d,) vector or (n, d) matrix of samples.
    anchor_kernel : optional precomputed (A, n) kernel block between the
        anchors and ``x``; passing it skips the kernel evaluation.

    Returns
    -------
    (R,) for a single sample, else (n, R).
    """
    single = np.asarray(x).ndim == 1
    if len(dual) == 0:
        n = 1 if single else np.asarray(x).shape[0]
        zeros = np.zeros((n, factors.rank))
        return zeros[0] if single else zeros
    if anchor_kernel is None:
        anchor_kernel = kernel_matrix(dual.kernel, dual.anchors, np.atleast_2d(x))
    g_anchor = mixing_matrix(factors, grid)[dual.anchor_tasks]
    out = (dual.coeffs[:, None] * g_anchor).T @ anchor_kernel  # (R, n)
    return out[:, 0] if single else out.T


def slice_features(
    latent: np.ndarray,
    factors: CpFactors,
    grid: TaskGrid,
    t: int,
    excluded_mode: int,
) -> np.ndarray:
    """Features for one factor-row subproblem.

    Elementwise product of a sample's latent features with the task's factor
    rows from every mode except ``excluded_mode`` (1-based).
    """
    if not 1 <= excluded_mode <= grid.nmodes:
        raise InvalidIndexError(
            f"mode {excluded_mode} outside [1, {grid.nmodes}]"
        )
    multi = grid.delinearize(t)
    out = np.asarray(latent, dtype=float).copy()
    for n, f in enumerate(factors.factors):
        if n + 1 == excluded_mode:
            continue
        out *= f[multi[n] - 1, :]
    return out


def complement_products(
    factors: CpFactors, grid: TaskGrid, excluded_mode: int
) -> np.ndarray:
    """(T, R) rows of per-task factor products that skip ``excluded_mode``."""
    if not 1 <= excluded_mode <= grid.nmodes:
        raise InvalidIndexError(
            f"mode {excluded_mode} outside [1, {grid.nmodes}]"
        )
    factors.check_grid(grid)
    multi = grid.multi_indices()
    out = np.ones((grid.total, factors.rank))
    for n, f in enumerate(factors.factors):
        if n + 1 == excluded_mode:
            continue
        out *= f[multi[:, n] - 1, :]
    return out


def explicit_shared_matrix(
    dual: DualSharedFactor, factors: CpFactors, grid: TaskGrid
) -> np.ndarray:
    """Materialize the (d, R) shared factor; linear kernels only."""
    if dual.kernel.kind != "linear":
        raise UnsupportedKernelError(
            "explicit shared factor requires a linear kernel, "
            f"got {dual.kernel.kind!r}"
        )
    g_anchor = mixing_matrix(factors, grid)[dual.anchor_tasks]
    return dual.anchors.T @ (dual.coeffs[:, None] * g_anchor)


def explicit_weights(
    dual: DualSharedFactor, factors: CpFactors, grid: TaskGrid
) -> np.ndarray:
    """(T, d) per-task weight vectors ``w_t``; linear kernels only."""
    shared = explicit_shared_matrix(dual, factors, grid)  # (d, R)
    return mixing_matrix(factors, grid) @ shared.T
