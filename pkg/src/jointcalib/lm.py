"""Finite-difference Jacobians and a plain Levenberg-Marquardt loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged


def fd_steps(x, rel_step=1e-6, floor=1e-8):
    return np.maximum(rel_step * np.abs(x), floor)


def numeric_jacobian(fun, x, rel_step=1e-6, floor=1e-8, sparsity=None, colors=None):
    """Central-difference Jacobian, one column per parameter.

    ``colors`` optionally groups columns whose residual rows (given by the
    boolean ``sparsity`` matrix) are disjoint; a group is differenced with a
    single pair of evaluations. Every column still gets its own step, so the
    result equals the ungrouped Jacobian on the rows that depend on it and is
    exactly zero elsewhere.
    """
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step, floor)
    if colors is None:
        colors = [[j] for j in range(x.size)]
    J = None
    for group in colors:
        group = np.atleast_1d(group)
        xp = x.copy()
        xm = x.copy()
        xp[group] += h[group]
        xm[group] -= h[group]
        d = fun(xp) - fun(xm)
        if J is None:
            J = np.zeros((d.size, x.size))
        den = xp[group] - xm[group]
        if len(group) == 1 or sparsity is None:
            for j, dj in zip(group, den):
                J[:, j] = d / dj
        else:
            for j, dj in zip(group, den):
                rows = sparsity[:, j]
                J[rows, j] = d[rows] / dj
    return J


def richardson_jacobian(fun, x, rel_step=1e-3, floor=1e-5):
    """Five-point stencil (fourth-order) Jacobian, used as an independent check."""
    x = np.asarray(x, dtype=float)
    h = fd_steps(x, rel_step, floor)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h[j]
        f2p, f1p, f1m, f2m = fun(x + 2 * e), fun(x + e), fun(x - e), fun(x - 2 * e)
        cols.append((-f2p + 8 * f1p - 8 * f1m + f2m) / (12 * h[j]))
    return np.column_stack(cols)


@dataclass
class LMResult:
    x: np.ndarray
    cost: float
    trace: list = field(default_factory=list)  # cost after every accepted step
    iterations: int = 0
    converged: bool = False
    reason: str = ""
    lam: float = 0.0


def levenberg_marquardt(
    fun,
    x0,
    jac,
    max_iters=100,
    lambda_init=1e-3,
    gtol=1e-10,
    ftol=1e-14,
    xtol=1e-12,
    lambda_max=1e16,
):
    """Minimize ``0.5 * |fun(x)|^2``.

    Damped normal equations with Marquardt diagonal scaling; a step is kept
    only when it lowers the cost (lambda halves), otherwise lambda grows by 4.
    All stopping tests are relative, so uniformly rescaling the residuals
    does not change the path.
    """
    x = np.array(x0, dtype=float)
    r = fun(x)
    cost = 0.5 * float(r @ r)
    if not np.isfinite(cost):
        raise Diverged("non-finite residuals at the initial point")
    lam = lambda_init
    res = LMResult(x=x, cost=cost, trace=[cost], lam=lam)

    for it in range(max_iters):
        if cost == 0.0:
            res.converged, res.reason = True, "zero_cost"
            break
        J = jac(x)
        g = J.T @ r
        colnorm = np.linalg.norm(J, axis=0)
        rnorm = np.sqrt(2.0 * cost)
        active = colnorm > 0
        gscaled = np.max(np.abs(g[active]) / (colnorm[active] * rnorm)) if active.any() else 0.0
        if gscaled <= gtol:
            res.converged, res.reason = True, "gradient"
            break

        A = J.T @ J
        D = np.diag(A).copy()
        D = np.maximum(D, 1e-12 * D.max())
        while True:
            try:
                delta = np.linalg.solve(A + lam * np.diag(D), -g)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                x_new = x + delta
                r_new = fun(x_new)
                cost_new = 0.5 * float(r_new @ r_new)
                if np.isfinite(cost_new) and cost_new < cost:
                    break
            lam *= 4.0
            if lam > lambda_max:
                if gscaled <= 1e-6:
                    res.converged, res.reason = True, "no_decrease"
                    res.lam = lam
                    return res
                raise Diverged(f"damping overflow at iteration {it} (cost {cost:.6g})")

        lam *= 0.5
        rel_drop = (cost - cost_new) / cost
        step_small = np.linalg.norm(delta) <= xtol * (np.linalg.norm(x) + xtol)
        x, r, cost = x_new, r_new, cost_new
        res.x, res.cost, res.lam = x, cost, lam
        res.trace.append(cost)
        res.iterations = it + 1
        if rel_drop <= ftol:
            res.converged, res.reason = True, "cost"
            break
        if step_small:
            res.converged, res.reason = True, "step"
            break
    else:
        res.converged, res.reason = False, "max_iters"
    res.lam = lam
    return res
