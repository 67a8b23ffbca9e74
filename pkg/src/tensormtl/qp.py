"""Box-and-equality convex QP solver.

Problems have the form

    maximize   -1/2 x' Q x + c' x
    subject to sum_{i in group g} a_i x_i = 0   for every group g,
               lower <= x <= upper,

with ``a_i`` in {-1, +1} and every variable in exactly one group.  Each
equality couples only its own group, so the solver repeatedly picks the
maximal-violating pair inside one group and optimizes the pair in closed
form, keeping all constraints satisfied at every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, EmptyTaskError, IllPosedProblemError

# Floor for the pair curvature; matches common SMO practice.
_CURVATURE_FLOOR = 1e-12


@dataclass
class QpProblem:
    Q: np.ndarray
    c: np.ndarray
    a: np.ndarray
    groups: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        self.a = np.asarray(self.a, dtype=float)
        self.groups = np.asarray(self.groups, dtype=int)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        n = self.c.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        for name in ("a", "groups", "lower", "upper"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have shape ({n},)")
        scale = max(1.0, float(np.max(np.abs(self.Q))) if n else 1.0)
        if n and float(np.max(np.abs(self.Q - self.Q.T))) > 1e-10 * scale:
            raise ValueError("Q is not symmetric within 1e-10 relative")
        if not np.all(np.isin(self.a, (-1.0, 1.0))):
            raise ValueError("constraint coefficients must be -1 or +1")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        ngroups = self.n_groups
        present = np.bincount(self.groups, minlength=ngroups)
        if np.any(self.groups < 0):
            raise ValueError("group ids must be non-negative")
        if np.any(present == 0):
            missing = int(np.flatnonzero(present == 0)[0])
            raise EmptyTaskError(f"group {missing} has no variables")

    @property
    def n(self) -> int:
        return self.c.shape[0]

    @property
    def n_groups(self) -> int:
        return int(self.groups.max()) + 1 if self.n else 0

    def objective(self, x: np.ndarray) -> float:
        """Maximization-form objective value at ``x``."""
        x = np.asarray(x, dtype=float)
        return float(-0.5 * x @ self.Q @ x + self.c @ x)


@dataclass
class QpSolution:
    x: np.ndarray
    group_multipliers: np.ndarray  # one bias per equality group
    kkt_residual: float
    iterations: int
    objective: float
    bias_fallback: np.ndarray      # True where no free variable fixed the bias
    objective_trace: list = field(default_factory=list)


class _GroupIndex:
    """Precomputed group-contiguous permutation for segmented reductions."""

    def __init__(self, groups: np.ndarray):
        self.perm = np.argsort(groups, kind="stable")
        sorted_groups = groups[self.perm]
        self.starts = np.searchsorted(
            sorted_groups, np.arange(sorted_groups[-1] + 1)
        )

    def seg_max(self, values: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(values[self.perm], self.starts)

    def seg_min(self, values: np.ndarray) -> np.ndarray:
        return np.minimum.reduceat(values[self.perm], self.starts)

    def members(self, g: int) -> np.ndarray:
        end = self.starts[g + 1] if g + 1 < len(self.starts) else len(self.perm)
        return self.perm[self.starts[g]: end]


def project_feasible(problem: QpProblem, x: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``x`` onto the box-and-equality feasible set.

    Per group the projection is ``clip(x_i - a_i * s, lower, upper)`` for the
    shift ``s`` that restores the equality; the shift is found by bisection
    (the constraint value is monotone in ``s``).
    """
    v_all = np.asarray(x, dtype=float)
    out = np.clip(v_all, problem.lower, problem.upper)
    for g in range(problem.n_groups):
        sel = np.flatnonzero(problem.groups == g)
        a = problem.a[sel]
        lo_, hi_ = problem.lower[sel], problem.upper[sel]
        v = v_all[sel]

        def constraint(s):
            return float(a @ np.clip(v - a * s, lo_, hi_))

        span = float(np.max(np.abs(v)) + np.max(hi_ - lo_) + 1.0)
        lo_s, hi_s = -span, span
        if constraint(0.0) == 0.0:
            continue
        for _ in range(200):
            mid = 0.5 * (lo_s + hi_s)
            if constraint(mid) > 0.0:
                lo_s = mid
            else:
                hi_s = mid
        s = 0.5 * (lo_s + hi_s)
        out[sel] = np.clip(v - a * s, lo_, hi_)
    return out


def _interval_bias(m_g: np.ndarray, M_g: np.ndarray) -> np.ndarray:
    """Midpoint of the multiplier interval [m_g, M_g], clamped to finite ends."""
    bias = 0.5 * (m_g + M_g)
    only_up = np.isfinite(m_g) & ~np.isfinite(M_g)
    only_low = ~np.isfinite(m_g) & np.isfinite(M_g)
    bias[only_up] = m_g[only_up]
    bias[only_low] = M_g[only_low]
    bias[~np.isfinite(m_g) & ~np.isfinite(M_g)] = 0.0
    return bias


def _multiplier_stats(problem, x, grad, gidx):
    """Per-group (max over up-movable, min over down-movable) of -a * grad."""
    phi = -problem.a * grad
    up = np.where(problem.a > 0, x < problem.upper, x > problem.lower)
    low = np.where(problem.a > 0, x > problem.lower, x < problem.upper)
    m_g = gidx.seg_max(np.where(up, phi, -np.inf))
    M_g = gidx.seg_min(np.where(low, phi, np.inf))
    return phi, up, low, m_g, M_g


def recover_bias(
    problem: QpProblem,
    x: np.ndarray,
    free_tol: float = 1e-8,
    grad: np.ndarray | None = None,
):
    """Per-group bias from the KKT conditions at ``x``.

    Free variables (strictly inside the box by ``free_tol`` times the box
    span) pin the bias exactly; their mean is returned.  Groups without free
    variables fall back to the midpoint of the interval implied by the
    bound-active variables, flagged in the second return value.

    Returns ``(biases, fallback_mask)``.
    """
    x = np.asarray(x, dtype=float)
    if grad is None:
        grad = problem.Q @ x - problem.c
    gidx = _GroupIndex(problem.groups)
    phi, _, _, m_g, M_g = _multiplier_stats(problem, x, grad, gidx)
    margin = free_tol * np.maximum(problem.upper - problem.lower, 1.0)
    free = (x > problem.lower + margin) & (x < problem.upper - margin)
    biases = _interval_bias(m_g, M_g)
    fallback = np.ones(problem.n_groups, dtype=bool)
    for g in range(problem.n_groups):
        members = gidx.members(g)
        f = members[free[members]]
        if f.size:
            biases[g] = float(np.mean(phi[f]))
            fallback[g] = False
    return biases, fallback


def _free_refine(problem, x, grad) -> bool:
    """Newton step on the free variables, line-searched against the box.

    Solves the equality-constrained quadratic restricted to the strictly
    interior variables exactly and moves as far toward that solution as the
    box allows.  Pairwise steps alone can crawl when several free variables
    sit on a nearly flat (rank-deficient) piece of the objective; this step
    exits such plateaus in one solve.  Returns True when it moved.
    """
    Q, a, lower, upper = problem.Q, problem.a, problem.lower, problem.upper
    span = np.maximum(upper - lower, 1.0)
    free = (x > lower + 1e-10 * span) & (x < upper - 1e-10 * span)
    F = np.flatnonzero(free)
    if F.size < 2:
        return False
    QFF = Q[np.ix_(F, F)]
    groups_f, ginv = np.unique(problem.groups[F], return_inverse=True)
    A = np.zeros((groups_f.size, F.size))
    A[ginv, np.arange(F.size)] = a[F]
    nf, ng = F.size, groups_f.size
    ridge = 1e-10 * max(1.0, float(np.trace(QFF)) / nf)
    K = np.zeros((nf + ng, nf + ng))
    K[:nf, :nf] = QFF + ridge * np.eye(nf)
    K[:nf, nf:] = A.T
    K[nf:, :nf] = A
    rhs = np.concatenate([-grad[F], np.zeros(ng)])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    delta = sol[:nf]
    if not np.all(np.isfinite(delta)) or not delta.any():
        return False
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(delta > 0, (upper[F] - x[F]) / delta, np.inf)
        t_lo = np.where(delta < 0, (lower[F] - x[F]) / delta, np.inf)
    t = min(1.0, float(np.min(np.minimum(t_hi, t_lo))))
    if t <= 0.0:
        return False
    step = t * delta
    x[F] += step
    np.clip(x, lower, upper, out=x)
    grad += Q[:, F] @ step
    return True


def _select_pair(problem, phi, up, low, members, diag):
    """Most violating up-movable variable of a group and its best partner.

    The partner maximizes the closed-form objective decrease
    ``(phi_i - phi_j)^2 / (2 quad_ij)`` among the group's down-movable
    variables below ``phi_i``.  Ties break toward the lowest index.
    """
    Q, a = problem.Q, problem.a
    phi_m = phi[members]
    i = int(members[np.argmax(np.where(up[members], phi_m, -np.inf))])
    cand = members[low[members] & (phi_m < phi[i])]
    quads = diag[i] + diag[cand] - 2.0 * a[i] * a[cand] * Q[i, cand]
    if np.min(quads) < -1e-8 * max(1.0, 2.0 * float(np.max(np.abs(diag)))):
        raise IllPosedProblemError(
            f"negative curvature on a pair with variable {i}; "
            "Q is not positive semidefinite"
        )
    np.maximum(quads, _CURVATURE_FLOOR, out=quads)
    diffs = phi[i] - phi[cand]
    j = int(cand[np.argmax(diffs * diffs / quads)])
    return i, j


def solve_qp(
    problem: QpProblem,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    x0: np.ndarray | None = None,
    record_objective: bool = False,
) -> QpSolution:
    """Decomposition solver over per-group violating pairs.

    Every iteration forms a working set with one violating pair from each
    group whose KKT violation (gap between the largest up-movable and
    smallest down-movable multiplier estimate) exceeds the tolerance: the
    group's most violating variable paired with the partner of largest
    closed-form decrease.  The pair directions preserve their groups'
    equality constraints, so the joint step over them is a small
    box-constrained QP; it is solved by cyclic coordinate descent starting
    from the most violated group, whose first sweep alone reproduces the
    classic one-pair update.  The joint step is what keeps coupled groups
    from undoing each other's progress pair by pair.

    Stops when every group's violation is at most ``tol``, which bounds the
    inf-norm of the projected gradient by ``tol``.  All tie-breaks take the
    lowest index, so the solve is deterministic.  ``max_iter`` counts pair
    updates.

    Raises
    ------
    ConvergenceError
        When ``max_iter`` pair updates were not enough; carries the best
        iterate and its residual.
    IllPosedProblemError
        When a pair exhibits negative curvature beyond round-off, i.e. Q is
        not positive semidefinite.
    """
    n = problem.n
    if x0 is None:
        x = np.zeros(n)
    else:
        x = project_feasible(problem, x0)
    Q, c, a = problem.Q, problem.c, problem.a
    lower, upper = problem.lower, problem.upper
    grad = Q @ x - c if x.any() else -c.copy()
    gidx = _GroupIndex(problem.groups)
    diag = np.ascontiguousarray(np.diagonal(Q))
    trace: list[float] = []

    iterations = 0
    residual = np.inf
    check_interval = max(200, n // 8)
    next_check = check_interval
    gap_at_check = np.inf
    while True:
        phi, up, low, m_g, M_g = _multiplier_stats(problem, x, grad, gidx)
        gaps = m_g - M_g
        finite = np.isfinite(gaps)
        worst = float(np.max(gaps[finite], initial=-np.inf))
        residual = float(max(0.0, worst))
        if record_objective:
            trace.append(problem.objective(x))
        if worst <= tol:
            break
        if iterations >= next_check:
            # Pairwise progress has gone stale; try the free-set Newton step.
            if worst > 0.5 * gap_at_check and _free_refine(problem, x, grad):
                next_check = iterations + check_interval
                gap_at_check = worst
                continue
            next_check = iterations + check_interval
            gap_at_check = worst
        if iterations >= max_iter:
            if _free_refine(problem, x, grad):
                phi, up, low, m_g, M_g = _multiplier_stats(
                    problem, x, grad, gidx
                )
                gaps = m_g - M_g
                finite = np.isfinite(gaps)
                worst = float(np.max(gaps[finite], initial=-np.inf))
                residual = float(max(0.0, worst))
                if worst <= tol:
                    break
            raise ConvergenceError(
                f"no convergence after {max_iter} pair updates "
                f"(violation {residual:.3e} > tol {tol:.3e})",
                best_x=x.copy(),
                residual=residual,
            )
        violating = np.flatnonzero(finite & (gaps > tol))
        violating = violating[np.argsort(-gaps[violating], kind="stable")]

        pairs_i = np.empty(violating.size, dtype=int)
        pairs_j = np.empty(violating.size, dtype=int)
        for r, g in enumerate(violating):
            pairs_i[r], pairs_j[r] = _select_pair(
                problem, phi, up, low, gidx.members(int(g)), diag
            )
        si, sj = a[pairs_i], a[pairs_j]
        caps_i = np.where(
            si > 0, upper[pairs_i] - x[pairs_i], x[pairs_i] - lower[pairs_i]
        )
        caps_j = np.where(
            sj > 0, x[pairs_j] - lower[pairs_j], upper[pairs_j] - x[pairs_j]
        )
        caps = np.minimum(caps_i, caps_j)
        lin = phi[pairs_i] - phi[pairs_j]
        # Restricted Hessian over the pair directions d_g (e_i a_i - e_j a_j).
        idx = np.concatenate([pairs_i, pairs_j])
        sign = np.concatenate([si, -sj])
        sub = Q[np.ix_(idx, idx)] * np.outer(sign, sign)
        k = violating.size
        H = sub[:k, :k] + sub[k:, k:] + sub[:k, k:] + sub[k:, :k]
        hdiag = np.maximum(np.diagonal(H), _CURVATURE_FLOOR)

        d = np.zeros(k)
        hd = np.zeros(k)
        sweeps = 1 if k == 1 else 8
        for _ in range(sweeps):
            delta_max = 0.0
            for r in range(k):
                target = d[r] + (lin[r] - hd[r]) / hdiag[r]
                new = min(max(target, 0.0), caps[r])
                change = new - d[r]
                if change != 0.0:
                    hd += change * H[:, r]
                    d[r] = new
                    delta_max = max(delta_max, abs(change))
            if delta_max == 0.0:
                break

        moved = np.flatnonzero(d > 0.0)
        for r in moved:
            i, j, step = int(pairs_i[r]), int(pairs_j[r]), d[r]
            x[i] += si[r] * step
            x[j] -= sj[r] * step
            # Land exactly on the bound that defined a binding cap so the
            # movability masks stay exact.
            if step == caps_i[r]:
                x[i] = upper[i] if si[r] > 0 else lower[i]
            if step == caps_j[r]:
                x[j] = lower[j] if sj[r] > 0 else upper[j]
            grad += (si[r] * step) * Q[i, :] - (sj[r] * step) * Q[j, :]
        np.clip(x, lower, upper, out=x)
        iterations += int(max(1, moved.size))

    phi_final = -a * grad
    margin = 1e-8 * np.maximum(upper - lower, 1.0)
    free = (x > lower + margin) & (x < upper - margin)
    biases = _interval_bias(m_g, M_g)
    fallback = np.ones(problem.n_groups, dtype=bool)
    for g in range(problem.n_groups):
        members = gidx.members(g)
        f = members[free[members]]
        if f.size:
            biases[g] = float(np.mean(phi_final[f]))
            fallback[g] = False
    return QpSolution(
        x=x,
        group_multipliers=biases,
        kkt_residual=residual,
        iterations=iterations,
        objective=problem.objective(x),
        bias_fallback=fallback,
        objective_trace=trace,
    )


@dataclass
class SplitProblem:
    """A +/-C box problem with an absolute-value penalty, in split form.

    The original variables live in ``[-C, C]`` with per-group zero-sum
    constraints and an objective

        maximize -1/2 v' K v + y' v - epsilon * ||v||_1.

    Splitting ``v = p - q`` with ``p, q`` in ``[0, C]`` turns the penalty
    into linear terms: coefficients ``y - epsilon`` on ``p`` and
    ``-y - epsilon`` on ``q``.  ``problem.x`` maps back via :meth:`merge`.
    """

    problem: QpProblem
    size: int

    def merge(self, x_split: np.ndarray) -> np.ndarray:
        return x_split[: self.size] - x_split[self.size:]


def split_absolute_penalty(
    K: np.ndarray,
    y: np.ndarray,
    epsilon: float,
    C: float,
    groups: np.ndarray,
) -> SplitProblem:
    """Build the split-form :class:`QpProblem` for an interval-insensitive fit."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    if not C > 0:
        raise ValueError("C must be > 0")
    K = np.asarray(K, dtype=float)
    y = np.asarray(y, dtype=float)
    groups = np.asarray(groups, dtype=int)
    m = y.shape[0]
    big_Q = np.block([[K, -K], [-K, K]])
    c = np.concatenate([y - epsilon, -y - epsilon])
    a = np.concatenate([np.ones(m), -np.ones(m)])
    grp = np.concatenate([groups, groups])
    problem = QpProblem(
        Q=big_Q,
        c=c,
        a=a,
        groups=grp,
        lower=np.zeros(2 * m),
        upper=np.full(2 * m, float(C)),
    )
    return SplitProblem(problem=problem, size=m)
