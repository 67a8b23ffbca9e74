"""Independent reference implementations used to check the solvers.

These deliberately avoid the package's solver code paths: the QP oracle is
a projected-gradient method, the saddle oracle is a dense solve of the full
indefinite block matrix, and the single-task references assemble their KKT
systems inline.
"""

from __future__ import annotations

import numpy as np


def project_box_equality(v, a, groups, lower, upper):
    """Projection onto {lower <= x <= upper, sum_g a_i x_i = 0 per group}.

    Bisection on the per-group shift; the constraint value is monotone in
    the shift.
    """
    v = np.asarray(v, dtype=float)
    out = np.clip(v, lower, upper)
    for g in np.unique(groups):
        sel = np.flatnonzero(groups == g)
        ag, lo, hi, vg = a[sel], lower[sel], upper[sel], v[sel]

        def val(s):
            return float(ag @ np.clip(vg - ag * s, lo, hi))

        span = float(np.max(np.abs(vg)) + np.max(hi - lo) + 1.0)
        lo_s, hi_s = -span, span
        for _ in range(200):
            mid = 0.5 * (lo_s + hi_s)
            if val(mid) > 0.0:
                lo_s = mid
            else:
                hi_s = mid
        s = 0.5 * (lo_s + hi_s)
        out[sel] = np.clip(vg - ag * s, lo, hi)
    return out


def pgd_solve(problem, tol=1e-10, max_iter=2_000_000):
    """Accelerated projected gradient on the minimization form.

    Minimizes 1/2 x'Qx - c'x over the problem's feasible set.  Stops when
    the projected-gradient map has inf-norm at most ``tol``.  Monotone
    restart keeps the objective non-increasing.
    """
    Q, c = problem.Q, problem.c
    a, groups = problem.a, problem.groups
    lower, upper = problem.lower, problem.upper

    def proj(v):
        return project_box_equality(v, a, groups, lower, upper)

    eigs = np.linalg.eigvalsh((Q + Q.T) / 2.0)
    L = max(float(eigs[-1]), 1e-12)
    step = 1.0 / L
    x = proj(np.zeros(problem.n))
    z = x.copy()
    t_k = 1.0
    f_best = 0.5 * x @ Q @ x - c @ x
    for _ in range(max_iter):
        grad_z = Q @ z - c
        x_new = proj(z - step * grad_z)
        f_new = 0.5 * x_new @ Q @ x_new - c @ x_new
        if f_new > f_best:
            # restart from the best point without momentum
            z = x.copy()
            t_k = 1.0
            grad_z = Q @ z - c
            x_new = proj(z - step * grad_z)
            f_new = 0.5 * x_new @ Q @ x_new - c @ x_new
        residual = np.max(np.abs(x_new - proj(x_new - step * (Q @ x_new - c)))) / step
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_k * t_k))
        z = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
        x, t_k = x_new, t_next
        f_best = min(f_best, f_new)
        if residual <= tol:
            break
    return x


def dense_saddle_solve(system):
    """Solve the full indefinite block system with a dense LU solve."""
    g = system.n_groups
    k = system.size
    full = np.zeros((g + k, g + k))
    full[:g, g:] = system.V.T
    full[g:, :g] = system.V
    full[g:, g:] = system.H
    rhs = np.concatenate([system.d1, system.d2])
    sol = np.linalg.solve(full, rhs)
    return sol[:g], sol[g:]


def single_task_lssvm(X, y, C, classification, gamma=None):
    """Directly assembled single-task least-squares fit.

    Returns ``(coeffs, bias)`` such that the decision value at x is
    ``sum_i coeffs_i k(x_i, x) + bias``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if gamma is None:
        K = X @ X.T
    else:
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(X * X, axis=1)[None, :]
            - 2.0 * (X @ X.T)
        )
        K = np.exp(-gamma * np.maximum(sq, 0.0))
    m = y.shape[0]
    if classification:
        inner = K * np.outer(y, y) + np.eye(m) / C
        col = y
        rhs = np.concatenate([[0.0], np.ones(m)])
    else:
        inner = K + np.eye(m) / C
        col = np.ones(m)
        rhs = np.concatenate([[0.0], y])
    full = np.zeros((m + 1, m + 1))
    full[0, 1:] = col
    full[1:, 0] = col
    full[1:, 1:] = inner
    sol = np.linalg.solve(full, rhs)
    bias = sol[0]
    duals = sol[1:]
    coeffs = duals * y if classification else duals
    return coeffs, bias
