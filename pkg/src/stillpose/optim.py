"""Damped quasi-Newton descent with Armijo backtracking.

Accepted iterates never increase the objective: a step is taken only when the
backtracking line search finds a sufficient decrease, otherwise the run stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class MinimizeResult:
    x: np.ndarray
    fun: float
    n_iter: int
    converged: bool
    accepted_values: list = field(default_factory=list)


def minimize(
    fun_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    fun: Callable[[np.ndarray], float] | None = None,
    max_iter: int = 200,
    tol: float = 1e-9,
    gtol: float = 1e-10,
    c1: float = 1e-4,
    min_step: float = 1e-14,
) -> MinimizeResult:
    """BFGS on the inverse Hessian; `fun` (value-only) speeds up the line search.

    Converges when the relative decrease of an accepted step falls below tol,
    or the gradient max-norm falls below gtol.
    """
    if fun is None:
        fun = lambda x: fun_grad(x)[0]
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun_grad(x)
    if not np.isfinite(f):
        raise ValueError(f"objective is not finite at the initial point ({f})")
    n = len(x)
    h_inv = np.eye(n)
    accepted = [f]
    converged = False
    it = 0

    for it in range(1, max_iter + 1):
        if np.abs(g).max() < gtol:
            converged = True
            it -= 1
            break
        d = -h_inv @ g
        slope = d @ g
        if slope >= 0:  # stale curvature: restart from steepest descent
            h_inv = np.eye(n)
            d = -g
            slope = d @ g
        alpha = 1.0
        f_new = np.inf
        while alpha > min_step:
            f_new = fun(x + alpha * d)
            if np.isfinite(f_new) and f_new <= f + c1 * alpha * slope:
                break
            alpha *= 0.5
        else:
            break  # no acceptable step in this direction
        x_new = x + alpha * d
        f_trial, g_new = fun_grad(x_new)
        f_new = f_trial

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            eye = np.eye(n)
            v = eye - rho * np.outer(s, y)
            h_inv = v @ h_inv @ v.T + rho * np.outer(s, s)

        rel_decrease = (f - f_new) / max(abs(f), 1e-12)
        x, f, g = x_new, f_new, g_new
        accepted.append(f)
        if rel_decrease < tol:
            converged = True
            break

    return MinimizeResult(x=x, fun=f, n_iter=it, converged=converged, accepted_values=accepted)
