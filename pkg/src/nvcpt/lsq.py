"""Damped Gauss-Newton (Levenberg-Marquardt) least squares."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass
class LMResult:
    x: Array
    cost: float
    residual: Array
    jacobian: Array
    iterations: int
    converged: bool
    gradient_norm: float
    message: str
    cost_history: list[float]


def numeric_jacobian(fun: Callable[[Array], Array], x: Array, step: Array | float) -> Array:
    """Central finite differences, one column per parameter."""
    x = np.asarray(x, dtype=float)
    steps = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    cols = []
    for j in range(x.size):
        dx = np.zeros_like(x)
        dx[j] = steps[j]
        cols.append((np.asarray(fun(x + dx)) - np.asarray(fun(x - dx))) / (2 * steps[j]))
    return np.column_stack(cols)


def _gradient_cosine(jac: Array, r: Array) -> float:
    # scale-free stationarity measure: max_j |J_j . r| / (|J_j| |r|)
    rn = np.linalg.norm(r)
    if rn == 0.0:
        return 0.0
    cn = np.linalg.norm(jac, axis=0)
    g = np.abs(jac.T @ r)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(cn > 0, g / (cn * rn), 0.0)
    return float(np.max(ratio)) if ratio.size else 0.0


def levenberg_marquardt(
    fun: Callable[[Array], Array],
    x0: Array,
    jac: Callable[[Array], Array] | None = None,
    free: Array | None = None,
    project: Callable[[Array], Array] | None = None,
    max_iter: int = 200,
    ftol: float = 1e-10,
    gtol: float = 1e-8,
    lam0: float = 1e-3,
    fd_step: Array | float = 1e-6,
) -> LMResult:
    """Minimize ``0.5 * |fun(x)|^2``.

    Steps solve ``(J^T J + lam diag(J^T J)) dx = -J^T r`` over the ``free``
    parameters; a step is accepted only if it lowers the cost, so the
    accepted cost sequence is monotone. ``project`` maps a trial point back
    onto the feasible set. Converged when the relative cost decrease of an
    accepted step is below ``ftol`` or the gradient cosine is below ``gtol``.
    """
    x = np.array(x0, dtype=float)
    free = np.ones(x.size, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    project = project or (lambda v: v)
    jac = jac or (lambda v: numeric_jacobian(fun, v, fd_step))

    r = np.asarray(fun(x), dtype=float)
    cost = 0.5 * float(r @ r)
    history = [cost]
    lam = lam0
    converged = False
    message = "iteration cap reached"
    it = 0
    j_full = jac(x)
    for it in range(max_iter + 1):
        jf = j_full[:, free]
        gnorm = _gradient_cosine(jf, r)
        if cost == 0.0 or gnorm < gtol:
            converged, message = True, "gradient below tolerance"
            break
        if it == max_iter:
            break
        jtj = jf.T @ jf
        grad = jf.T @ r
        diag = np.maximum(np.diag(jtj), 1e-300)
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            trial = x.copy()
            trial[free] += step
            trial = project(trial)
            r_try = np.asarray(fun(trial), dtype=float)
            cost_try = 0.5 * float(r_try @ r_try)
            if np.isfinite(cost_try) and cost_try < cost:
                accepted = True
                break
            lam *= 10.0
        if not accepted:
            converged, message = True, "no cost-decreasing step remains"
            break
        rel = (cost - cost_try) / cost
        x, r, cost = trial, r_try, cost_try
        history.append(cost)
        lam = max(lam / 10.0, 1e-12)
        j_full = jac(x)
        if rel < ftol:
            converged, message = True, "relative cost change below tolerance"
            it += 1
            break
    return LMResult(
        x=x,
        cost=cost,
        residual=r,
        jacobian=j_full,
        iterations=it,
        converged=converged,
        gradient_norm=_gradient_cosine(j_full[:, free], r),
        message=message,
        cost_history=history,
    )
