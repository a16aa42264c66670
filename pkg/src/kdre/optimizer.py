"""BFGS with Armijo backtracking, instrumented for iteration counting."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import DomainError, ObjectiveHandle
from .kernelcore import InputError


@dataclass(frozen=True)
class OptimizerConfig:
    grad_tol: float = 1e-5
    max_iter: int = 10000
    line_search: str = "armijo_backtracking"
    armijo_c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if self.line_search != "armijo_backtracking":
            raise InputError(f"unknown line search {self.line_search!r}")
        if not self.grad_tol > 0:
            raise InputError("grad_tol must be positive")
        if self.max_iter < 1 or self.max_backtracks < 1:
            raise InputError("max_iter and max_backtracks must be positive")
        if not (0 < self.armijo_c1 < 1 and 0 < self.backtrack_factor < 1):
            raise InputError("armijo_c1 and backtrack_factor must lie in (0, 1)")


@dataclass
class OptimizationTrace:
    iterations: int
    function_evals: int
    final_point: np.ndarray
    final_grad_norm: float
    converged: bool
    wall_time: float
    values: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    skipped_updates: int = 0
    message: str = ""


def _safe_value(obj: ObjectiveHandle, x: np.ndarray) -> float:
    try:
        v = obj.value_at(x)
    except DomainError:
        return math.inf
    return v if math.isfinite(v) else math.inf


def bfgs_minimize(
    obj: ObjectiveHandle, x0, cfg: OptimizerConfig | None = None, callback=None
) -> OptimizationTrace:
    """Minimize ``obj`` from ``x0`` with inverse-Hessian BFGS.

    The inverse Hessian starts at the identity.  Trial points where the
    objective raises DomainError count as +inf, so iterates stay feasible.
    Curvature pairs with s^T y <= 1e-12 |s| |y| leave the approximation
    unchanged.  Running out of iterations, a failed line search, and a step
    that no longer lowers the value in floating point all end the run with
    ``converged=False`` and a message; none of them raises.

    ``callback(x)`` is called with x0 and after every accepted step; a truthy
    return value stops the run.
    """
    cfg = cfg or OptimizerConfig()
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64).ravel()
    if x.shape != (obj.dim,):
        raise InputError(f"x0 has shape {x.shape}, objective expects ({obj.dim},)")
    if not np.all(np.isfinite(x)):
        raise InputError("x0 contains non-finite entries")
    f = _safe_value(obj, x)
    if not math.isfinite(f):
        raise InputError("objective is not finite at x0")
    evals = 1
    g = obj.grad_at(x)
    h_inv = np.eye(obj.dim)
    values = [f]
    grad_norms = [float(np.max(np.abs(g)))]
    skipped = 0
    it = 0
    gnorm = float(np.max(np.abs(g)))
    message = "converged"
    stop = callback is not None and bool(callback(x))

    while gnorm > cfg.grad_tol:
        if stop:
            message = "stopped by callback"
            break
        if it >= cfg.max_iter:
            message = "max_iter reached"
            break
        p = -h_inv @ g
        slope = float(g @ p)
        if slope >= 0:
            # lost positive definiteness numerically; restart along -g
            h_inv = np.eye(obj.dim)
            p = -g
            slope = float(g @ p)
        step = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks):
            x_new = x + step * p
            f_new = _safe_value(obj, x_new)
            evals += 1
            if f_new <= f + cfg.armijo_c1 * step * slope:
                accepted = True
                break
            step *= cfg.backtrack_factor
        if not accepted:
            message = "line search failed"
            break
        if f_new >= f:
            # accepted only because f + c1*step*slope rounds to f
            message = "no further decrease"
            break
        g_new = obj.grad_at(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            hy = h_inv @ y
            # H+ = (I - rho s y^T) H (I - rho y s^T) + rho s s^T, expanded
            h_inv += (rho * rho * (y @ hy) + rho) * np.outer(s, s) - rho * (np.outer(hy, s) + np.outer(s, hy))
        else:
            skipped += 1
        x, f, g = x_new, f_new, g_new
        values.append(f)
        it += 1
        gnorm = float(np.max(np.abs(g)))
        grad_norms.append(gnorm)
        if callback is not None:
            stop = bool(callback(x))

    return OptimizationTrace(
        iterations=it,
        function_evals=evals,
        final_point=x,
        final_grad_norm=gnorm,
        converged=gnorm <= cfg.grad_tol,
        wall_time=time.perf_counter() - start,
        values=values,
        grad_norms=grad_norms,
        skipped_updates=skipped,
        message=message,
    )


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    probes: int
    skipped: int


def grad_check(obj: ObjectiveHandle, points, step: float = 1e-5) -> GradCheckResult:
    """Worst relative error of ``grad_at`` against central differences.

    Coordinate i of point x is probed with h = step * (1 + |x_i|).  The error
    per point is |fd - grad|_inf / max(|grad|_inf, |fd|_inf, tiny).  Probes
    that leave the psi-domain are skipped and counted.
    """
    worst = 0.0
    probes = skipped = 0
    for x in points:
        x = np.asarray(x, dtype=np.float64)
        grad = obj.grad_at(x)
        fd = np.full(x.size, np.nan)
        for i in range(x.size):
            h = step * (1.0 + abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            try:
                fd[i] = (obj.value_at(xp) - obj.value_at(xm)) / (2.0 * h)
                probes += 1
            except DomainError:
                skipped += 1
        ok = ~np.isnan(fd)
        if not ok.any():
            continue
        scale = max(np.max(np.abs(grad[ok])), np.max(np.abs(fd[ok])), 1e-300)
        worst = max(worst, float(np.max(np.abs(fd[ok] - grad[ok])) / scale))
    if probes == 0:
        raise DomainError("every finite-difference probe left the domain")
    return GradCheckResult(max_rel_error=worst, probes=probes, skipped=skipped)
