"""Fast end-to-end sanity checks behind ``watl selftest``."""

from __future__ import annotations

import math
import sys
import time

import numpy as np

from .frechet import KernelSpec, baseline_predict, global_weights, local_weights
from .oracles import projection_by_enumeration, prox_by_line_search
from .simulation import SimConfig, generate_study, run_experiment
from .transfer import TransferConfig, bias_correct_rows, watl_predict
from .wasserstein import ProbGrid, make_grid, project_values


class CheckFailed(AssertionError):
    pass


def _require(cond: bool, message: str):
    if not cond:
        raise CheckFailed(message)


def _corrupt_grid(M: int) -> ProbGrid:
    # bypasses validation, as a damaged grid from disk or a bad refactor would
    good = make_grid(M)
    bad = object.__new__(ProbGrid)
    nodes = good.nodes.copy()
    nodes[[1, 2]] = nodes[[2, 1]]
    object.__setattr__(bad, "nodes", nodes)
    object.__setattr__(bad, "weights", good.weights * 0.9)
    return bad


def check_grid(grid: ProbGrid):
    n, w = grid.nodes, grid.weights
    _require(bool(np.all(np.diff(n) > 0)), "nodes are not strictly increasing")
    _require(0.0 < n[0] and n[-1] < 1.0, "nodes leave (0, 1)")
    _require(bool(np.all(w > 0)), "nonpositive quadrature weight")
    _require(abs(w.sum() - 1.0) <= 1e-12, f"weights sum to {w.sum():.6g}, expected 1")


def check_weights(rng: np.random.Generator, trials: int = 20):
    for _ in range(trials):
        n, p = int(rng.integers(5, 60)), int(rng.integers(1, 4))
        X = rng.normal(size=(n, p))
        s = global_weights(X, rng.normal(size=p), ridge=0.0)
        _require(abs(s.sum() - n) <= 1e-8 * n, f"global weights sum to {s.sum()!r}, expected {n}")
        x1 = rng.uniform(size=n)
        sl = local_weights(x1[:, None], float(rng.uniform(0.2, 0.8)), KernelSpec("gaussian", 0.3))
        _require(abs(sl.mean() - 1.0) <= 1e-8, f"local weights average {sl.mean()!r}, expected 1")


def check_prox(rng: np.random.Generator, trials: int = 50):
    grid = make_grid(20)
    for _ in range(trials):
        f0, f = rng.normal(size=grid.M), rng.normal(size=grid.M)
        lam = float(rng.uniform(0, 3))
        fast = bias_correct_rows(f0[None], f[None], lam, grid.weights)[0]
        slow = prox_by_line_search(f0, f, lam, grid.weights)
        gap = math.sqrt(grid.weights @ (fast - slow) ** 2)
        _require(gap <= 1e-6, f"bias correction differs from line search by {gap:.3g}")


def check_projection(rng: np.random.Generator, trials: int = 30, grid: ProbGrid | None = None):
    for _ in range(trials):
        g = grid or make_grid(int(rng.integers(2, 9)))
        y = np.cumsum(rng.normal(size=g.M))[rng.permutation(g.M)]
        lo, hi = sorted(rng.normal(scale=2.0, size=2))
        fast = project_values(y, g.weights, lo, hi)
        slow = projection_by_enumeration(y, g.weights, lo, hi)
        _require(bool(np.all(np.abs(fast - slow) <= 1e-8)), "projection differs from brute force")


def check_degeneracy():
    grid = make_grid(50)
    target = generate_study(0, 0.0, 80, seed=3, grid=grid)
    base = baseline_predict(target, 0.4)
    fit = watl_predict(target, [], 0.4, TransferConfig(lam=0.0))
    _require(bool(np.max(np.abs(fit.prediction.values - base.values)) <= 1e-12),
             "target-only prediction with lambda 0 differs from the baseline")


def check_smoke():
    cfg = SimConfig(K=2, n0=60, tau=40, psi=(0.1, 0.2), reps=2, n_eval=20, grid_size=40, seed=11)
    report = run_experiment(cfg, workers=1)
    _require(not report.failures, f"smoke replications failed: {report.failures}")
    for name, stats in report.cells[0]["rmspr"].items():
        _require(math.isfinite(stats["mean"]) and stats["mean"] > 0, f"{name} RMSPR is not finite")


def run_selftest(inject: str | None = None, out=None) -> bool:
    out = sys.stdout if out is None else out
    rng = np.random.default_rng(20240613)
    grid = _corrupt_grid(8) if inject == "corrupt-grid" else make_grid(8)
    checks = [
        ("grid invariants", lambda: check_grid(grid)),
        ("weight identities", lambda: check_weights(rng)),
        ("prox oracle", lambda: check_prox(rng)),
        ("projection oracle", lambda: check_projection(rng)),
        ("degeneracy", check_degeneracy),
        ("monte carlo smoke", check_smoke),
    ]
    ok = True
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            fn()
        except Exception as exc:
            ok = False
            print(f"FAIL {name}: {exc}", file=out)
        else:
            print(f"PASS {name} ({time.perf_counter() - t0:.2f}s)", file=out)
    print("selftest " + ("passed" if ok else "FAILED"), file=out)
    return ok
