"""Limited-memory quasi-Newton minimization with a strong-Wolfe line search.

The driver works on any callable `fun(x) -> (value, gradient)`; for the
assimilation problems each call is one forward integration plus one adjoint
sweep, and every line-search trial pays for both (the slope phi'(tau) comes
from the gradient, which is always computed).
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import LineSearchError, ValidationError


class LbfgsMemory:
    """Ring buffer of curvature pairs (s, y) with the two-loop recursion.

    Pairs with s^T y <= 1e-14 |s||y| are skipped at update time, keeping the
    implied inverse-Hessian approximation positive definite.  The initial
    scaling is gamma = s^T y / y^T y of the newest pair.
    """

    curvature_floor = 1e-14

    def __init__(self, capacity=5):
        if capacity < 1:
            raise ValidationError("memory capacity must be >= 1")
        self.capacity = capacity
        self.pairs = deque(maxlen=capacity)

    def update(self, s, y):
        """Store a pair if it carries usable curvature; returns acceptance."""
        sy = float(np.dot(s, y))
        floor = self.curvature_floor * float(np.linalg.norm(s) * np.linalg.norm(y))
        if sy <= floor:
            return False
        self.pairs.append((s, y, 1.0 / sy))
        return True

    def flush(self):
        self.pairs.clear()

    def __len__(self):
        return len(self.pairs)

    def direction(self, g):
        """Two-loop recursion for d = -H g; -g when the memory is empty."""
        if not self.pairs:
            return -g
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(self.pairs):
            a = rho * np.dot(s, q)
            q -= a * y
            alphas.append(a)
        s, y, rho = self.pairs[-1]
        gamma = np.dot(s, y) / np.dot(y, y)
        r = gamma * q
        for (s, y, rho), a in zip(self.pairs, reversed(alphas)):
            b = rho * np.dot(y, r)
            r += (a - b) * s
        return -r


def lbfgs_direction(memory, g):
    """Quasi-Newton direction; falls back to steepest descent (flushing the
    memory) if the two-loop result is not a descent direction."""
    d = memory.direction(g)
    if np.dot(g, d) >= 0.0:
        memory.flush()
        return -g
    return d


@dataclass
class LineSearchParams:
    c1: float = 1e-4
    c2: float = 0.9
    tau_init: float = 1.0
    max_evals: int = 25
    tau_min: float = 1e-12

    def __post_init__(self):
        if not (0.0 < self.c1 < self.c2 < 1.0):
            raise ValidationError("need 0 < c1 < c2 < 1")


@dataclass
class LineSearchResult:
    tau: float
    value: float
    slope: float
    aux: object
    evals: int
    status: str  # "wolfe" | "decrease_only"


def _cubic_min(a, fa, da, b, fb, db):
    """Minimizer of the cubic matching values/slopes at a and b (or None)."""
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0.0:
        return None
    d2 = np.sqrt(disc) * np.sign(b - a)
    denom = db - da + 2.0 * d2
    if denom == 0.0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return float(t)


def line_search(phi, phi0, dphi0, params=None):
    """Strong-Wolfe line search (bracketing plus cubic-interpolation zoom).

    `phi(tau)` returns (value, slope, aux); `aux` rides along so callers can
    reuse the evaluation at the accepted point.  Requires dphi0 < 0.  When
    the evaluation budget runs out, the best sufficient-decrease point seen
    is returned with status "decrease_only"; with no such point, or when the
    bracket collapses below tau_min, LineSearchError is raised.
    """
    p = params or LineSearchParams()
    if not dphi0 < 0.0:
        raise LineSearchError(f"not a descent direction: phi'(0) = {dphi0:.3e}")
    evals = 0
    best = None  # best sufficient-decrease point (tau, val, slope, aux)

    def suff(tau, val):
        return val <= phi0 + p.c1 * tau * dphi0

    def curv(slope):
        return abs(slope) <= p.c2 * abs(dphi0)

    def zoom(lo, hi):
        nonlocal evals, best
        (tlo, flo, dlo, _), (thi, fhi, dhi, _) = lo, hi
        while evals < p.max_evals:
            t = _cubic_min(tlo, flo, dlo, thi, fhi, dhi)
            width = abs(thi - tlo)
            lo_t, hi_t = min(tlo, thi), max(tlo, thi)
            if t is None or not (lo_t + 0.1 * width <= t <= hi_t - 0.1 * width):
                t = 0.5 * (tlo + thi)
            if t < p.tau_min:
                raise LineSearchError(f"bracket collapsed below tau_min ({t:.3e})")
            val, slope, aux = phi(t)
            evals += 1
            if suff(t, val) and (best is None or val < best[1]):
                best = (t, val, slope, aux)
            if not suff(t, val) or val >= flo:
                thi, fhi, dhi = t, val, slope
            else:
                if curv(slope):
                    return LineSearchResult(t, val, slope, aux, evals, "wolfe")
                if slope * (thi - tlo) >= 0.0:
                    thi, fhi, dhi = tlo, flo, dlo
                tlo, flo, dlo = t, val, slope
        return None

    tau_prev, f_prev, d_prev = 0.0, phi0, dphi0
    tau = p.tau_init
    while evals < p.max_evals:
        val, slope, aux = phi(tau)
        evals += 1
        if suff(tau, val) and (best is None or val < best[1]):
            best = (tau, val, slope, aux)
        if not suff(tau, val) or (evals > 1 and val >= f_prev):
            out = zoom((tau_prev, f_prev, d_prev, None), (tau, val, slope, aux))
            if out is not None:
                return out
            break
        if curv(slope):
            return LineSearchResult(tau, val, slope, aux, evals, "wolfe")
        if slope >= 0.0:
            out = zoom((tau, val, slope, aux), (tau_prev, f_prev, d_prev, None))
            if out is not None:
                return out
            break
        tau_prev, f_prev, d_prev = tau, val, slope
        tau *= 2.0

    if best is not None:
        return LineSearchResult(best[0], best[1], best[2], best[3], evals, "decrease_only")
    raise LineSearchError(f"no sufficient-decrease point in {evals} evaluations")


@dataclass
class OptimConfig:
    max_iters: int = 100
    gtol: float = 1e-8
    ftol: float = 0.0
    memory: int = 5
    line_search: LineSearchParams = field(default_factory=LineSearchParams)


@dataclass
class OptimResult:
    x: np.ndarray
    value: float
    gradient: np.ndarray
    iterations: int
    status: str
    log: list  # rows (iter, J, |g|, tau, fevals, wall_time_s)
    fevals: int


def minimize(fun, x0, config=None, callback=None):
    """L-BFGS minimization of `fun(x) -> (value, gradient)`.

    Accepted iterates decrease the objective monotonically (Wolfe sufficient
    decrease); stopping tests are |g| <= gtol max(1, |g_0|), the relative
    decrease falling below ftol (if positive), the iteration budget, and
    line-search failure.
    """
    cfg = config or OptimConfig()
    x = np.asarray(x0, dtype=float).copy()
    t_start = time.perf_counter()
    j, g = fun(x)
    fevals = 1
    gnorm0 = float(np.linalg.norm(g))
    gtol_abs = cfg.gtol * max(1.0, gnorm0)
    memory = LbfgsMemory(cfg.memory)
    log = [(0, j, gnorm0, 0.0, fevals, time.perf_counter() - t_start)]
    if callback:
        callback(0, x, j, g)
    if gnorm0 <= gtol_abs:
        return OptimResult(x, j, g, 0, "gtol", log, fevals)

    status = "max_iters"
    it = 0
    for it in range(1, cfg.max_iters + 1):
        d = lbfgs_direction(memory, g)
        slope0 = float(np.dot(g, d))

        def phi(tau, x=x, d=d):
            xt = x + tau * d
            jt, gt = fun(xt)
            return jt, float(np.dot(gt, d)), (xt, gt)

        try:
            ls = line_search(phi, j, slope0, cfg.line_search)
        except LineSearchError:
            status = "line_search_failure"
            break
        fevals += ls.evals
        x_new, g_new = ls.aux
        memory.update(x_new - x, g_new - g)
        j_prev, x, j, g = j, x_new, ls.value, g_new
        gnorm = float(np.linalg.norm(g))
        log.append((it, j, gnorm, ls.tau, fevals, time.perf_counter() - t_start))
        if callback:
            callback(it, x, j, g)
        if gnorm <= gtol_abs:
            status = "gtol"
            break
        if cfg.ftol > 0.0 and (j_prev - j) <= cfg.ftol * max(1.0, abs(j_prev)):
            status = "ftol"
            break
        if ls.status == "decrease_only" and ls.tau <= cfg.line_search.tau_min * 10:
            status = "line_search_failure"
            break
    return OptimResult(x, j, g, it, status, log, fevals)
