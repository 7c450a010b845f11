"""Variational analysis: limited-memory BFGS over the window cost.

The minimizer is self-contained (two-loop recursion, strong Wolfe line
search with cubic interpolation) so that iteration and evaluation counts
are exact and inspectable; they feed the cost accounting reports.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass

import numpy as np

from .cost import AssimilationWindow, cost, gradient
from .models import as_state


class Termination(enum.Enum):
    GRAD_NORM = "grad_norm"
    REL_F = "rel_f"
    MAX_ITER = "max_iter"
    LINE_SEARCH_FAIL = "line_search_fail"


@dataclass(frozen=True)
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 100
    grad_norm_tol: float = 1e-10
    rel_f_tol: float = 1e-6
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 40
    log_path: str | None = None

    def __post_init__(self):
        if not 0.0 < self.c1 < self.c2 < 1.0:
            raise ValueError("line search needs 0 < c1 < c2 < 1")
        if self.memory < 0 or self.max_iterations < 1:
            raise ValueError("memory must be >= 0 and max_iterations >= 1")
        if self.grad_norm_tol <= 0 or self.rel_f_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    cost: float
    grad_norm: float
    step: float
    dir_deriv: float = 0.0   # g . d of the step taken to reach this iterate


@dataclass(frozen=True)
class OptimResult:
    analysis: np.ndarray
    cost_value: float
    iterations: int
    function_evaluations: int
    gradient_evaluations: int
    termination: Termination
    history: tuple


def _two_loop(g, pairs):
    """Apply the inverse-Hessian approximation from stored (s, y) pairs."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * (s @ q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        beta = rho * (y @ q)
        q += s * (a - beta)
    return q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic fitting two (point, value, slope) pairs."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return 0.5 * (a + b)
    d2 = np.sqrt(disc)
    if a > b:
        d2 = -d2
    t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2)
    lo, hi = min(a, b), max(a, b)
    if not np.isfinite(t) or t <= lo or t >= hi:
        return 0.5 * (a + b)
    return t


def _strong_wolfe(phi, dphi, f0, g0, alpha0, c1, c2, max_evals):
    """Bracket-and-zoom search for an alpha satisfying strong Wolfe.

    Returns (alpha, f_alpha) or None when the evaluation budget runs out
    without an acceptable point.
    """
    evals = 0

    def value(a):
        nonlocal evals
        evals += 1
        return phi(a)

    a_prev, f_prev, d_prev = 0.0, f0, g0
    a = alpha0

    def zoom(lo, f_lo, d_lo, hi, f_hi, d_hi):
        nonlocal evals
        while evals < max_evals:
            a_j = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            # keep the trial away from the bracket ends
            span = abs(hi - lo)
            a_min, a_max = min(lo, hi), max(lo, hi)
            if a_j < a_min + 0.1 * span or a_j > a_max - 0.1 * span:
                a_j = 0.5 * (lo + hi)
            f_j = value(a_j)
            if f_j > f0 + c1 * a_j * g0 or f_j >= f_lo:
                hi, f_hi, d_hi = a_j, f_j, None
                d_hi = dphi(a_j)
            else:
                d_j = dphi(a_j)
                if abs(d_j) <= -c2 * g0:
                    return a_j, f_j
                if d_j * (hi - lo) >= 0.0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a_j, f_j, d_j
            if span < 1e-16:
                return None
        return None

    first = True
    while evals < max_evals:
        f_a = value(a)
        if f_a > f0 + c1 * a * g0 or (not first and f_a >= f_prev):
            return zoom(a_prev, f_prev, d_prev, a, f_a, dphi(a))
        d_a = dphi(a)
        if abs(d_a) <= -c2 * g0:
            return a, f_a
        if d_a >= 0.0:
            return zoom(a, f_a, d_a, a_prev, f_prev, d_prev)
        a_prev, f_prev, d_prev = a, f_a, d_a
        a *= 2.0
        first = False
    return None


def minimize_function(f, g, x0, cfg: LbfgsConfig) -> OptimResult:
    """Minimize a smooth function given its gradient.

    ``memory = 0`` degrades to steepest descent with the same line search.
    Counters include every call made, line search included.
    """
    n_f = 0
    n_g = 0

    def fval(x):
        nonlocal n_f
        n_f += 1
        return float(f(x))

    def gval(x):
        nonlocal n_g
        n_g += 1
        return np.asarray(g(x), dtype=float)

    x = as_state(x0).copy()
    fx = fval(x)
    gx = gval(x)
    pairs: deque = deque(maxlen=max(cfg.memory, 1))
    history = [IterationRecord(0, fx, float(np.linalg.norm(gx)), 0.0)]
    termination = Termination.MAX_ITER
    iterations = 0

    for it in range(1, cfg.max_iterations + 1):
        gnorm = float(np.linalg.norm(gx))
        if gnorm <= cfg.grad_norm_tol:
            termination = Termination.GRAD_NORM
            break

        if cfg.memory > 0 and pairs:
            d = -_two_loop(gx, list(pairs))
        else:
            d = -gx
        dg = float(d @ gx)
        if dg >= 0.0:   # defective curvature pairs; fall back to descent
            d = -gx
            dg = -gnorm**2

        if it == 1 and not pairs:
            alpha0 = min(1.0, 1.0 / max(np.sum(np.abs(gx)), 1e-12))
        else:
            alpha0 = 1.0

        # line search over phi(a) = f(x + a d), with caching of the last
        # gradient so the accepted point's gradient is not recomputed
        g_cache: dict[float, np.ndarray] = {}

        def phi(a):
            return fval(x + a * d)

        def dphi(a):
            ga = gval(x + a * d)
            g_cache[a] = ga
            return float(ga @ d)

        hit = _strong_wolfe(phi, dphi, fx, dg, alpha0, cfg.c1, cfg.c2,
                            cfg.max_line_search)
        if hit is None:
            termination = Termination.LINE_SEARCH_FAIL
            break
        alpha, f_new = hit
        g_new = g_cache.get(alpha)
        if g_new is None:
            g_new = gval(x + alpha * d)

        s = alpha * d
        y = g_new - gx
        sy = float(s @ y)
        if cfg.memory > 0 and sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            pairs.append((s, y, 1.0 / sy))

        f_prev = fx
        x = x + s
        fx, gx = f_new, g_new
        iterations = it
        history.append(
            IterationRecord(it, fx, float(np.linalg.norm(gx)), alpha, dg)
        )

        if f_prev - fx <= cfg.rel_f_tol * max(1.0, abs(f_prev)):
            termination = Termination.REL_F
            break
    else:
        termination = Termination.MAX_ITER

    result = OptimResult(
        analysis=x,
        cost_value=fx,
        iterations=iterations,
        function_evaluations=n_f,
        gradient_evaluations=n_g,
        termination=termination,
        history=tuple(history),
    )
    if cfg.log_path:
        write_iteration_log(cfg.log_path, result)
    return result


def minimize(win: AssimilationWindow, x_init, cfg: LbfgsConfig | None = None) -> OptimResult:
    """4D-Var analysis: minimize the window cost from ``x_init``."""
    cfg = cfg or LbfgsConfig()
    return minimize_function(
        lambda x: cost(win, x), lambda x: gradient(win, x), x_init, cfg
    )


def write_iteration_log(path, result: OptimResult) -> None:
    with open(path, "w") as fh:
        fh.write("iter,cost,grad_norm,step\n")
        for rec in result.history:
            fh.write(
                f"{rec.iteration},{rec.cost:.17g},{rec.grad_norm:.17g},{rec.step:.17g}\n"
            )
