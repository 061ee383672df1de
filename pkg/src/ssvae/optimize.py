"""Projected gradient descent on a box, shared by the fitting and minimax code.

Small dense problems only: the step is initialized with a Barzilai-Borwein
estimate and corrected by monotone Armijo backtracking, and iterates are
projected onto the box after every move.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MinimizeResult:
    x: np.ndarray
    value: float
    trace: np.ndarray
    converged: bool
    n_iter: int


def minimize_box(
    fun_grad,
    x0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    max_iter: int = 2000,
    tol: float = 1e-10,
    armijo: float = 1e-4,
    shrink: float = 0.5,
    max_backtracks: int = 40,
    patience: int = 3,
) -> MinimizeResult:
    """Minimize ``fun_grad`` (returning value and gradient) over the box [lo, hi].

    Stops once the loss decrease stays below ``tol`` for ``patience``
    consecutive accepted steps, or when no backtracked step improves.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    x = np.clip(np.asarray(x0, dtype=float).copy(), lo, hi)
    f, g = fun_grad(x)
    trace = [f]
    step = 1.0
    stall = 0
    prev_x = None
    prev_g = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if prev_x is not None:
            s = x - prev_x
            dg = g - prev_g
            ss = float(s @ s)
            sg = float(s @ dg)
            if sg > 1e-16 and ss > 0:
                step = min(max(ss / sg, 1e-8), 1e3)
        accepted = False
        t = step
        for _ in range(max_backtracks):
            cand = np.clip(x - t * g, lo, hi)
            d = cand - x
            if not np.any(d):
                break
            fc, gc = fun_grad(cand)
            # Armijo on the projected direction
            if fc <= f + armijo * float(g @ d):
                prev_x, prev_g = x, g
                decrease = f - fc
                x, f, g = cand, fc, gc
                trace.append(f)
                accepted = True
                stall = stall + 1 if decrease < tol else 0
                break
            t *= shrink
        if not accepted:
            # no feasible descent step: projected stationary point
            converged = True
            break
        if stall >= patience:
            converged = True
            break
    return MinimizeResult(
        x=x, value=float(f), trace=np.asarray(trace), converged=converged, n_iter=it
    )


def central_difference_gradient(fun, x: np.ndarray, step: float = 1e-6) -> np.ndarray:
    """Central finite differences, one coordinate at a time."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        g[i] = (fun(x + e) - fun(x - e)) / (2 * step)
    return g
