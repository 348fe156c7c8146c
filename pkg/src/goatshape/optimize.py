"""First-order minimizer with per-parameter step scaling and backtracking.

Used by pose fitting, displacement refinement, and monocular fitting. The
loss/gradient closure is supplied by the caller; accepted iterates never
increase the loss (candidates failing the backtracking test are discarded).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import FitError


@dataclass
class OptimizeResult:
    x: np.ndarray
    loss: float
    history: list = field(default_factory=list)  # accepted losses, in order
    iterations: int = 0
    converged: bool = False
    stop_reason: str = ""


def minimize(
    loss_grad: Callable[[np.ndarray], tuple],
    x0: np.ndarray,
    max_iterations: int = 100,
    tolerance: float = 1e-9,
    step: float = 1.0,
    max_step: float = 4.0,
    backtracks: int = 25,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    rms_decay: float = 0.9,
) -> OptimizeResult:
    """Gradient descent scaled by an RMS accumulator, with backtracking.

    `loss_grad(x)` returns (loss, grad). `project`, when given, clamps each
    candidate before evaluation (box constraints).
    """
    x = np.asarray(x0, dtype=float).copy()
    loss, grad = loss_grad(x)
    if not np.isfinite(loss):
        raise FitError("initial loss is not finite", {"loss": float(loss)})
    res = OptimizeResult(x=x, loss=float(loss), history=[float(loss)])
    ms = np.zeros_like(x)
    alpha = step
    for it in range(max_iterations):
        gnorm = float(np.linalg.norm(grad))
        if gnorm == 0.0:
            res.converged = True
            res.stop_reason = "zero gradient"
            break
        ms = rms_decay * ms + (1.0 - rms_decay) * grad**2
        direction = grad / (np.sqrt(ms / (1.0 - rms_decay ** (it + 1))) + 1e-12)
        accepted = False
        a = alpha
        for _ in range(backtracks):
            cand = x - a * direction
            if project is not None:
                cand = project(cand)
            cand_loss, cand_grad = loss_grad(cand)
            if np.isfinite(cand_loss) and cand_loss < loss:
                x, loss, grad = cand, float(cand_loss), cand_grad
                accepted = True
                break
            a *= 0.5
        res.iterations = it + 1
        if not accepted:
            res.converged = True
            res.stop_reason = "no descent direction"
            break
        prev = res.history[-1]
        res.history.append(loss)
        alpha = min(a * 1.3, max_step)
        if prev - loss <= tolerance * max(1.0, abs(prev)):
            res.converged = True
            res.stop_reason = "loss plateau"
            break
    else:
        res.stop_reason = "iteration cap"
    res.x = x
    res.loss = loss
    return res


def finite_difference_gradient(f, x, step=1e-5):
    """Central finite differences; the reference for gradient checks."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(len(x)):
        xp = x.copy()
        xm = x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g
