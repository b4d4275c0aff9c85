"""Deterministic first-order minimizer shared by the parametric calibrators."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from .core import InvalidInputError, OptimizationError

Objective = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass(frozen=True)
class OptimizerConfig:
    gtol: float = 1e-6
    ftol: float = 1e-10
    max_iter: int = 10000
    memory: int = 10
    max_halvings: int = 50
    armijo: float = 1e-4


@dataclass
class OptimizeResult:
    x: np.ndarray
    fun: float
    grad_norm: float
    n_iter: int
    converged: bool
    reason: str
    trace: list = field(default_factory=list)

    def diagnostics(self) -> dict:
        return {
            "final_nll": self.fun,
            "grad_norm": self.grad_norm,
            "iterations": self.n_iter,
            "converged": self.converged,
            "stop_reason": self.reason,
        }


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize_nll(objective: Objective, init, config: OptimizerConfig | None = None) -> OptimizeResult:
    """Minimize a smooth objective returning ``(value, gradient)``.

    Limited-memory BFGS directions with a backtracking line search that halves
    the step until the Armijo condition holds with a finite value. Stops when
    the gradient norm drops to ``gtol``, when one step improves the objective
    by no more than ``ftol`` relative to its magnitude, or after ``max_iter``
    iterations. Running out of halvings on finite values ends the descent
    (the current point is kept); running out while every trial was
    non-finite raises :class:`OptimizationError`.
    """
    cfg = config or OptimizerConfig()
    x = np.array(init, dtype=float).reshape(-1)
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=float)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise InvalidInputError("objective is not finite at the initial point")
    trace = [f]
    pairs: deque = deque(maxlen=cfg.memory)
    reason = "max_iter"
    converged = False
    it = 0
    while it < cfg.max_iter:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.gtol:
            reason, converged = "gtol", True
            break
        d = -_two_loop(g, list(pairs)) if pairs else -g
        slope = float(g @ d)
        if slope >= 0:
            pairs.clear()
            d, slope = -g, -gnorm ** 2
        step = 1.0 if pairs else min(1.0, 1.0 / gnorm)
        saw_finite = False
        for _ in range(cfg.max_halvings + 1):
            x_new = x + step * d
            f_new, g_new = objective(x_new)
            f_new = float(f_new)
            finite = np.isfinite(f_new) and np.all(np.isfinite(g_new))
            saw_finite |= bool(finite)
            if finite and f_new <= f + cfg.armijo * step * slope:
                break
            step *= 0.5
        else:
            if not saw_finite:
                raise OptimizationError("objective non-finite along the descent direction")
            reason, converged = "line_search", True
            break
        it += 1
        g_new = np.asarray(g_new, dtype=float)
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s) * np.linalg.norm(y)) and sy > 0:
            pairs.append((s, y, 1.0 / sy))
        improvement = f - f_new
        x, f, g = x_new, f_new, g_new
        trace.append(f)
        if improvement <= cfg.ftol * max(abs(f), 1.0):
            reason, converged = "ftol", True
            break
    return OptimizeResult(x=x, fun=f, grad_norm=float(np.linalg.norm(g)), n_iter=it,
                          converged=converged, reason=reason, trace=trace)

