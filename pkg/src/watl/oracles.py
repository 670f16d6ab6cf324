"""Slow reference solvers used to cross-check the fast closed forms.

Both are deliberately naive so their correctness is easy to audit.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def prox_objective(g, f0, f, lam, weights) -> float:
    """``||g - f0||^2 + lam * ||g - f||`` in the weighted grid norm."""
    d0 = np.asarray(g) - f0
    d1 = np.asarray(g) - f
    return float(weights @ (d0 * d0) + lam * math.sqrt(max(weights @ (d1 * d1), 0.0)))


def golden_section(fun, a: float, b: float, tol: float = 1e-12, maxiter: int = 500) -> float:
    """Minimizer of a unimodal ``fun`` on ``[a, b]``."""
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(maxiter):
        if b - a <= tol:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = fun(d)
    best = min((a, fun(a)), (b, fun(b)), (0.5 * (a + b), fun(0.5 * (a + b))), key=lambda t: t[1])
    return best[0]


def prox_by_line_search(f0, f, lam, weights) -> np.ndarray:
    """Minimize the prox objective along the segment ``f + t (f0 - f)``, t in [0, 1].

    The objective is convex and symmetric about that segment, so the global
    minimizer lies on it.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    D = f0 - f
    t = golden_section(lambda s: prox_objective(f + s * D, f0, f, lam, weights), 0.0, 1.0)
    return f + t * D


def projection_by_enumeration(y, weights, lo: float = -math.inf, hi: float = math.inf) -> np.ndarray:
    """Weighted L2 projection onto nondecreasing vectors in ``[lo, hi]``.

    Enumerates every partition of the index range into contiguous blocks,
    sets each block to its clipped weighted mean and keeps the best
    monotone candidate. The optimum of the constrained quadratic program is
    always of this form, so the search is exact. Cost is ``2^(M-1)``.
    """
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    M = y.size
    best, best_val = None, math.inf
    for cuts in itertools.product((False, True), repeat=M - 1):
        g = np.empty(M)
        start = 0
        for j in range(M):
            if j == M - 1 or cuts[j]:
                blk = slice(start, j + 1)
                g[blk] = min(max(float(w[blk] @ y[blk] / w[blk].sum()), lo), hi)
                start = j + 1
        if np.any(np.diff(g) < 0):
            continue
        val = float(w @ (g - y) ** 2)
        if val < best_val:
            best, best_val = g, val
    return best
