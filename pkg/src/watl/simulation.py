"""Simulation design, ground truth and the experiment runner.

Study ``k`` has covariates ``X ~ U(0, 1)`` and responses with quantile
function::

    Q(u) = w (1 - u) u + (1 - X) u + X * Qz(u)

where ``Qz`` is the quantile function of ``N(0.5, 1 - psi_k)`` truncated to
``(0, 1)`` and ``w ~ N(0, 1)`` truncated to ``(-0.5, 0.5)``. The target has
``psi_0 = 0``. Because ``w`` has mean zero, the regression truth at ``x``
is ``(1 - x) u + x Qz(u)``.

Random streams are counter based: every draw uses
``SeedSequence([seed, rep, stream, index])`` with the stream ids below, so a
replication's data never depends on which worker ran it or in what order.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidArgument, WatlError
from .frechet import estimate_matrix
from .study import Study, pool
from .transfer import TransferConfig, predict_many
from .wasserstein import ProbGrid, QuantileGrid, make_grid, project_values

STREAM_STUDY = 0
STREAM_QUERIES = 1
STREAM_SAMPLES = 2
STREAM_CV = 3

ESTIMATORS = ("watl", "awatl", "only_target", "only_source", "pooled")

# response support implied by the design: Q(0+) = 0 and Q(1-) = 1
SUPPORT = (0.0, 1.0)


def rng_for(seed: int, *counter: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, counter)]))


def truncated_normal_quantile(mu: float, sigma2: float, a: float, b: float, u):
    """Quantile of ``N(mu, sigma2)`` truncated to ``(a, b)``, vectorized in ``u``.

    Upper-tail truncation windows are handled by reflecting about ``mu`` so
    the CDF differences never cancel catastrophically.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if not (sigma2 > 0 and math.isfinite(sigma2)):
        raise InvalidArgument(f"variance must be positive, got {sigma2!r}")
    if not a < b:
        raise InvalidArgument(f"truncation interval ({a}, {b}) is empty")
    if np.any(~((u_arr > 0) & (u_arr < 1))):
        raise InvalidArgument("u must lie strictly inside (0, 1)")
    s = math.sqrt(sigma2)
    alpha, beta = (a - mu) / s, (b - mu) / s
    if alpha > 0:
        out = 2 * mu - _tn_quantile(mu, s, 2 * mu - b, 2 * mu - a, 1.0 - u_arr)
    else:
        out = _tn_quantile(mu, s, a, b, u_arr)
    out = np.clip(out, a, b)
    return out if out.ndim else float(out)


def _tn_quantile(mu, s, a, b, u):
    pa = ndtr((a - mu) / s)
    pb = ndtr((b - mu) / s)
    return mu + s * ndtri(pa + u * (pb - pa))


def z_quantile(psi: float, u):
    """Quantile of ``N(0.5, 1 - psi)`` truncated to ``(0, 1)``."""
    if not 0 <= psi < 1:
        raise InvalidArgument(f"psi must lie in [0, 1), got {psi!r}")
    return truncated_normal_quantile(0.5, 1.0 - psi, 0.0, 1.0, u)


@dataclass(frozen=True, eq=False)
class LatentStudy:
    """Simulated study before its responses are materialized."""

    k: int
    psi: float
    X: np.ndarray
    w: np.ndarray

    @property
    def n(self) -> int:
        return self.X.size

    def quantile_values(self, u) -> np.ndarray:
        """Each unit's response quantile function at ``u``; ``(n, len(u))``."""
        u = np.asarray(u, dtype=np.float64)
        X = self.X[:, None]
        return self.w[:, None] * (1 - u) * u + (1 - X) * u + X * z_quantile(self.psi, u)

    def quantile_study(self, grid: ProbGrid, bounded: bool = True) -> Study:
        lo, hi = SUPPORT if bounded else (-math.inf, math.inf)
        return Study(self.X[:, None], quantiles=self.quantile_values(grid.nodes), grid=grid,
                     label=_label(self.k), role="target" if self.k == 0 else "source",
                     lo=lo, hi=hi)

    def sample_study(self, N: int, rng: np.random.Generator, bounded: bool = True) -> Study:
        """``N`` draws per unit by inverse transform of the unit's quantile function."""
        if N < 1:
            raise InvalidArgument("need at least one observation per distribution")
        U = rng.uniform(size=(self.n, N))
        U = np.clip(U, 1e-300, 1 - 1e-16)
        X = self.X[:, None]
        Y = self.w[:, None] * (1 - U) * U + (1 - X) * U + X * z_quantile(self.psi, U)
        lo, hi = SUPPORT if bounded else (-math.inf, math.inf)
        return Study.from_samples(self.X[:, None], list(Y), label=_label(self.k),
                                  role="target" if self.k == 0 else "source", lo=lo, hi=hi)


def _label(k: int) -> str:
    return "target" if k == 0 else f"source{k}"


def generate_latent(k: int, psi: float, n: int, rng: np.random.Generator) -> LatentStudy:
    if not 0 <= psi < 1:
        raise InvalidArgument(f"psi must lie in [0, 1), got {psi!r}")
    if n < 1:
        raise InvalidArgument("study size must be positive")
    X = rng.uniform(size=n)
    w = truncated_normal_quantile(0.0, 1.0, -0.5, 0.5, rng.uniform(size=n).clip(1e-16, 1 - 1e-16))
    return LatentStudy(k, float(psi), X, np.atleast_1d(w))


def generate_study(k: int, psi: float, n: int, seed: int, grid: ProbGrid,
                   bounded: bool = True) -> Study:
    """Simulated study ``k`` with ``n`` units, responses on ``grid``."""
    return generate_latent(k, psi, n, rng_for(seed, STREAM_STUDY, k)).quantile_study(grid, bounded)


def true_regression_quantile(x: float, psi: float, grid: ProbGrid) -> QuantileGrid:
    """Regression truth ``(1 - x) u + x Qz(u)`` of a study with parameter ``psi``."""
    return QuantileGrid(grid, true_regression_matrix([x], psi, grid)[0])


def true_regression_matrix(xs, psi: float, grid: ProbGrid) -> np.ndarray:
    x = np.asarray(xs, dtype=np.float64)[:, None]
    u = grid.nodes
    return (1 - x) * u + x * z_quantile(psi, u)


def rmspr(preds: Sequence[QuantileGrid], truths: Sequence[QuantileGrid]) -> float:
    """Root mean squared Wasserstein distance between paired distributions."""
    if len(preds) != len(truths) or len(preds) == 0:
        raise InvalidArgument(f"need equal nonempty lists, got {len(preds)} and {len(truths)}")
    grid = preds[0].grid
    if any(q.grid != grid for q in (*preds, *truths)):
        raise InvalidArgument("all distributions must share one grid")
    P = np.stack([q.values for q in preds])
    T = np.stack([q.values for q in truths])
    return rmspr_matrix(P, T, grid.weights)


def rmspr_matrix(P: np.ndarray, T: np.ndarray, weights: np.ndarray) -> float:
    return math.sqrt(float(np.mean((P - T) ** 2 @ weights)))


@dataclass(frozen=True)
class SimConfig:
    """One cell of the simulation design.

    Source sizes are ``k * tau`` unless ``source_sizes`` lists them.
    ``selection`` controls how the adaptive estimator's informative set is
    chosen: ``"per_query"`` (separately at every evaluation point) or
    ``"shared"`` (once per replication from scores averaged over the
    evaluation points).
    """

    K: int = 5
    n0: int = 200
    tau: int = 100
    psi: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    reps: int = 50
    n_eval: int = 100
    seed: int = 0
    grid_size: int = 100
    estimators: tuple = ("watl", "only_target", "only_source")
    source_sizes: tuple | None = None
    lam: float | str = "cv"
    L: int | str = 2
    cv_folds: int = 5
    lambda_grid: tuple | str = "scaled"
    selection: str = "per_query"
    bounded: bool = True

    def __post_init__(self):
        object.__setattr__(self, "psi", tuple(float(v) for v in self.psi))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.source_sizes is not None:
            object.__setattr__(self, "source_sizes", tuple(int(v) for v in self.source_sizes))
        if self.K < 0 or len(self.psi) != self.K:
            raise InvalidArgument(f"psi lists {len(self.psi)} values for K={self.K} sources")
        if any(not 0 <= p < 1 for p in self.psi):
            raise InvalidArgument("psi values must lie in [0, 1)")
        if self.reps < 1 or self.n0 < 1 or self.tau < 1 or self.n_eval < 1:
            raise InvalidArgument("reps, n0, tau and n_eval must be positive")
        if self.source_sizes is not None and (len(self.source_sizes) != self.K
                                              or min(self.source_sizes, default=1) < 1):
            raise InvalidArgument("source_sizes must list K positive sizes")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise InvalidArgument(f"unknown estimators {sorted(unknown)}; choose from {ESTIMATORS}")
        if self.K == 0 and {"only_source", "awatl"} & set(self.estimators):
            raise InvalidArgument("only_source and awatl need at least one source")
        if self.selection not in ("per_query", "shared"):
            raise InvalidArgument("selection must be 'per_query' or 'shared'")

    @property
    def sizes(self) -> tuple:
        if self.source_sizes is not None:
            return self.source_sizes
        return tuple((k + 1) * self.tau for k in range(self.K))

    def informative(self) -> tuple:
        """Positions of the ``L`` sources with the smallest ``psi``."""
        if isinstance(self.L, str):
            return ()
        order = sorted(range(self.K), key=lambda k: (self.psi[k], k))
        return tuple(sorted(order[: int(self.L)]))


@dataclass
class ExperimentReport:
    cells: list = field(default_factory=list)
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    runtime: dict = field(default_factory=dict)

    def cell(self, **match) -> dict:
        for c in self.cells:
            if all(c["config"].get(k) == v for k, v in match.items()):
                return c
        raise KeyError(match)

    def mean(self, estimator: str, **match) -> float:
        return self.cell(**match)["rmspr"][estimator]["mean"]

    def to_dict(self, timing: bool = False) -> dict:
        out = {"cells": self.cells, "records": self.records, "failures": self.failures}
        if timing:
            out["runtime"] = self.runtime
        return out

    def extend(self, other: "ExperimentReport") -> "ExperimentReport":
        self.cells.extend(other.cells)
        self.records.extend(other.records)
        self.failures.extend(other.failures)
        for k, v in other.runtime.items():
            self.runtime[k] = self.runtime.get(k, 0.0) + v
        return self


def simulate_replication(config: SimConfig, rep: int) -> dict:
    """Generate one replication's studies, fit every estimator, score RMSPR."""
    grid = make_grid(config.grid_size)
    seed = config.seed
    target = generate_latent(0, 0.0, config.n0, rng_for(seed, rep, STREAM_STUDY, 0)) \
        .quantile_study(grid, config.bounded)
    sources = [
        generate_latent(k + 1, config.psi[k], config.sizes[k],
                        rng_for(seed, rep, STREAM_STUDY, k + 1)).quantile_study(grid, config.bounded)
        for k in range(config.K)
    ]
    xq = rng_for(seed, rep, STREAM_QUERIES).uniform(size=config.n_eval)
    truth = true_regression_matrix(xq, 0.0, grid)
    cv_seed = int(np.random.SeedSequence([seed, rep, STREAM_CV]).generate_state(1)[0])
    tcfg = TransferConfig(lam=config.lam, L=config.L, grid_size=config.grid_size,
                          cv_folds=config.cv_folds, lambda_grid=config.lambda_grid,
                          seed=cv_seed, shared_selection=config.selection == "shared")
    w = grid.weights
    record = {"rep": rep, "rmspr": {}}

    def baseline(study):
        est = estimate_matrix(study, xq[:, None])
        return project_values(est, w, study.lo, study.hi)

    for name in config.estimators:
        if name == "only_target":
            pred = baseline(target)
        elif name == "only_source":
            pred = baseline(pool(sources))
        elif name == "pooled":
            pred = baseline(pool([target, *sources], role="target"))
        else:
            fit = predict_many(target, sources, xq[:, None], tcfg, adaptive=name == "awatl")
            pred = fit.predictions
            record[f"{name}_lam"] = fit.lam
            if name == "awatl":
                record["awatl_L"] = fit.L
                record["selection"] = fit.selected.mean(axis=0).tolist()
                ref = np.zeros(config.K, dtype=bool)
                ref[list(config.informative())] = True
                record["joint_selection"] = float(np.mean(np.all(fit.selected == ref, axis=1)))
        record["rmspr"][name] = rmspr_matrix(pred, truth, w)
    return record


def _safe_replication(args):
    config, rep = args
    try:
        return simulate_replication(config, rep)
    except WatlError as exc:
        return {"rep": rep, "error": f"{type(exc).__name__}: {exc}"}


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("WATL_THREADS", "1")))
    except ValueError:
        return 1


def run_experiment(config: SimConfig, workers: int | None = None) -> ExperimentReport:
    """Run every replication of one cell and aggregate.

    Replications are independent; with ``workers > 1`` they run in a
    process pool and are re-sorted by index, so the report does not depend
    on scheduling.
    """
    workers = default_workers() if workers is None else workers
    start = time.perf_counter()
    jobs = [(config, rep) for rep in range(config.reps)]
    if workers > 1 and config.reps > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_safe_replication, jobs))
    else:
        results = [_safe_replication(j) for j in jobs]
    results.sort(key=lambda r: r["rep"])
    cfg = asdict(config)
    ok = [r for r in results if "error" not in r]
    failures = [{"config": cfg, **r} for r in results if "error" in r]

    summary = {}
    for name in config.estimators:
        vals = np.array([r["rmspr"][name] for r in ok])
        summary[name] = {
            "mean": float(vals.mean()) if vals.size else math.nan,
            "sd": float(vals.std(ddof=1)) if vals.size > 1 else 0.0,
            "n": int(vals.size),
        }
    cell = {"config": cfg, "rmspr": summary}
    for name in ("watl", "awatl"):
        if name in config.estimators and ok:
            cell[f"{name}_lam_mean"] = float(np.mean([r[f"{name}_lam"] for r in ok]))
            cell[f"{name}_lam_positive_rate"] = float(np.mean([r[f"{name}_lam"] > 0 for r in ok]))
    if "awatl" in config.estimators and ok:
        cell["selection_rates"] = np.mean([r["selection"] for r in ok], axis=0).tolist()
        cell["joint_selection_rate"] = float(np.mean([r["joint_selection"] for r in ok]))
        cell["joint_selection_all_rate"] = float(np.mean([r["joint_selection"] == 1.0 for r in ok]))
    records = [{"config": {"n0": config.n0, "tau": config.tau, "psi": list(config.psi)}, **r}
               for r in ok]
    return ExperimentReport(cells=[cell], records=records, failures=failures,
                            runtime={"seconds": time.perf_counter() - start})
