"""Limited-memory quasi-Newton minimizer with a weak-Wolfe bisection line search.

The weak curvature condition (sufficient decrease plus a directional-derivative
bound) keeps the search well-defined on the hinge-cubed penalties, which are C^2
but not C^infinity.  Piece times stay positive through T_i = exp(tau_i).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["OptimizerConfig", "SolveReport", "minimize", "pack", "unpack", "chain_to_tau"]


@dataclass
class OptimizerConfig:
    memory: int = 8
    max_iter: int = 60
    grad_tol_rel: float = 1e-5
    c1: float = 1e-4
    c2: float = 0.9
    max_line_search: int = 40
    # optional early exit for budgeted callers: stop after this many
    # iterations without meaningful best-objective progress
    stall_iters: int | None = None
    stall_f_rel: float = 1e-3

    def __post_init__(self):
        if not (0 < self.c1 < self.c2 < 1):
            raise ValueError("need 0 < c1 < c2 < 1")
        if self.memory < 3:
            raise ValueError("memory must be >= 3")


@dataclass
class SolveReport:
    iterations: int
    evaluations: int
    f0: float
    f_best: float
    grad_norm: float
    converged: bool
    stop_reason: str
    aborted: bool = False


def pack(q: np.ndarray, T: np.ndarray) -> np.ndarray:
    """(q, T) -> flat decision vector with tau = log(T)."""
    return np.concatenate([np.asarray(q, dtype=float).ravel(), np.log(np.asarray(T, dtype=float))])


def unpack(x: np.ndarray, M: int) -> tuple[np.ndarray, np.ndarray]:
    nq = 3 * (M - 1)
    q = x[:nq].reshape(M - 1, 3)
    with np.errstate(over="ignore"):  # callers guard non-finite durations
        T = np.exp(x[nq:])
    return q, T


def chain_to_tau(grad_q: np.ndarray, grad_T: np.ndarray, T: np.ndarray) -> np.ndarray:
    """Pull a (q, T) gradient back through tau = log(T)."""
    return np.concatenate([np.asarray(grad_q).ravel(), np.asarray(grad_T) * np.asarray(T)])


def _weak_wolfe(fun, x, f0, g0, d, cfg):
    """Bisection search for Armijo + weak curvature; returns best effort on failure."""
    dg0 = float(g0 @ d)
    if dg0 >= 0.0:
        return None
    lo, hi = 0.0, math.inf
    alpha = 1.0
    best = None
    evals = 0
    for _ in range(cfg.max_line_search):
        f1, g1 = fun(x + alpha * d)
        evals += 1
        if not np.isfinite(f1):
            hi = alpha
        elif f1 > f0 + cfg.c1 * alpha * dg0:
            hi = alpha
        elif float(g1 @ d) < cfg.c2 * dg0:
            if best is None or f1 < best[1]:
                best = (alpha, f1, g1)
            lo = alpha
        else:
            return alpha, f1, g1, evals, True
        alpha = 0.5 * (lo + hi) if hi < math.inf else 2.0 * lo if lo > 0 else alpha * 0.5
    if best is not None:
        return best[0], best[1], best[2], evals, False
    return None


def minimize(fun, x0: np.ndarray, cfg: OptimizerConfig | None = None):
    """L-BFGS descent on fun(x) -> (value, gradient).

    Returns (x_best, SolveReport).  The best-seen iterate is returned even on
    line-search failure or non-finite evaluations, so callers always get a
    usable point with f(x) <= f(x0).
    """
    cfg = cfg or OptimizerConfig()
    x = np.asarray(x0, dtype=float).copy()
    f, g = fun(x)
    evals = 1
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return x, SolveReport(0, evals, f, f, float(np.linalg.norm(g)), False,
                              "nonfinite-at-start", aborted=True)
    f_init = float(f)
    f_best, x_best = f, x.copy()
    S: list[np.ndarray] = []
    Y: list[np.ndarray] = []
    rho: list[float] = []
    stop = "max-iter"
    it = 0
    converged = False
    aborted = False
    last_progress_it = 0
    for it in range(1, cfg.max_iter + 1):
        gnorm = float(np.linalg.norm(g))
        # gradient norm relative to the objective scale: hinge penalties make
        # the starting gradient arbitrarily steep, so |g0| is no yardstick
        if gnorm <= cfg.grad_tol_rel * max(1.0, abs(f)):
            stop, converged = "grad-tol", True
            break
        if cfg.stall_iters is not None and it - last_progress_it > cfg.stall_iters:
            stop = "stalled"
            break
        # two-loop recursion
        d = -g.copy()
        alphas = []
        for s, y, r in zip(reversed(S), reversed(Y), reversed(rho)):
            a = r * float(s @ d)
            alphas.append(a)
            d -= a * y
        if S:
            ys = float(S[-1] @ Y[-1])
            yy = float(Y[-1] @ Y[-1])
            if yy > 0:
                d *= ys / yy
        for (s, y, r), a in zip(zip(S, Y, rho), reversed(alphas)):
            b = r * float(y @ d)
            d += (a - b) * s
        if float(g @ d) >= 0.0:  # safeguard: fall back to steepest descent
            d = -g.copy()
        if not S:
            d = d / max(float(np.linalg.norm(d)), 1e-300)  # unit first step
        ls = _weak_wolfe(fun, x, f, g, d, cfg)
        if ls is None:
            stop = "line-search-failure"
            break
        alpha, f1, g1, ls_evals, wolfe_ok = ls
        evals += ls_evals
        if not np.isfinite(f1) or not np.all(np.isfinite(g1)):
            stop, aborted = "nonfinite", True
            break
        s = alpha * d
        y = g1 - g
        sy = float(s @ y)
        if wolfe_ok and sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            S.append(s)
            Y.append(y)
            rho.append(1.0 / sy)
            if len(S) > cfg.memory:
                S.pop(0)
                Y.pop(0)
                rho.pop(0)
        x = x + s
        f, g = f1, g1
        if f < f_best - cfg.stall_f_rel * max(1.0, abs(f_best)):
            last_progress_it = it
        if f < f_best:
            f_best, x_best = f, x.copy()
        if not wolfe_ok:
            stop = "line-search-failure"
            break
    return x_best, SolveReport(iterations=it, evaluations=evals, f0=f_init,
                               f_best=float(f_best), grad_norm=float(np.linalg.norm(g)),
                               converged=converged, stop_reason=stop, aborted=aborted)
