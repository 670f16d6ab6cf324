"""Wasserstein transfer learning with known or adaptively selected sources.

The estimator at a query point ``x`` runs in three steps:

1. aggregate the weighted quantile estimates of the target and the
   sources, each weighted by its sample size;
2. pull the target's own weighted estimate towards that aggregate with a
   norm penalty of strength ``lam`` (closed-form proximal step);
3. project the result back onto valid quantile functions.

The adaptive variant first scores every source by how far its weighted
estimate sits from the target's and keeps only the ``L`` closest. Global
and local (kernel) weights share all of this machinery, and sample-mode
studies are turned into empirical quantile functions up front.

Source positions in this module are 0-based indices into ``sources``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DegenerateWindowError, InvalidArgument
from .frechet import MODES, KernelSpec, _queries, weight_matrix
from .study import Study
from .wasserstein import (
    GridFunction,
    ProbGrid,
    QuantileGrid,
    _same_grid,
    l2_norm_rows,
    make_grid,
    project_values,
)

COARSE_LAMBDA_GRID = tuple(round(0.1 * i, 1) for i in range(31))
SCALED_GRID_POINTS = 31


@dataclass(frozen=True)
class TransferConfig:
    """Knobs for one transfer fit.

    ``lam`` is a number, ``"cv"`` (cross-validated over ``lambda_grid``) or
    ``"theory"`` (``n0 ** (-1/2 + theory_eps)``). ``lambda_grid`` is an
    explicit tuple or ``"scaled"`` (see :func:`scaled_lambda_grid`). ``L`` is the informative
    set size for the adaptive estimator, a number or ``"cv"`` (all of
    ``0..K``). ``bandwidth`` applies in local mode: a number, ``"cv"`` or
    ``"silverman"``. Bounds of ``None`` inherit the target's support.
    """

    mode: str = "global"
    lam: float | str = "cv"
    L: int | str = "cv"
    kernel: str = "gaussian"
    bandwidth: float | str = "cv"
    grid_size: int = 500
    ridge: float | None = None
    lo: float | None = None
    hi: float | None = None
    cv_folds: int = 5
    lambda_grid: tuple | str = "scaled"
    bandwidth_grid: tuple | None = None
    seed: int = 0
    shared_selection: bool = False
    theory_eps: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.lam, str):
            if self.lam not in ("cv", "theory"):
                raise InvalidArgument(f"lam must be a number, 'cv' or 'theory', got {self.lam!r}")
        elif not (self.lam >= 0 and math.isfinite(self.lam)):
            raise InvalidArgument(f"lam must be a finite nonnegative number, got {self.lam!r}")
        if isinstance(self.L, str):
            if self.L != "cv":
                raise InvalidArgument(f"L must be an integer or 'cv', got {self.L!r}")
        elif int(self.L) != self.L or self.L < 0:
            raise InvalidArgument(f"L must be a nonnegative integer, got {self.L!r}")
        if isinstance(self.bandwidth, str):
            if self.bandwidth not in ("cv", "silverman"):
                raise InvalidArgument(f"bandwidth must be a number, 'cv' or 'silverman', got {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise InvalidArgument(f"bandwidth must be positive, got {self.bandwidth!r}")
        if int(self.cv_folds) != self.cv_folds or self.cv_folds < 2:
            raise InvalidArgument("cv_folds must be an integer >= 2")
        if isinstance(self.lambda_grid, str):
            if self.lambda_grid != "scaled":
                raise InvalidArgument(f"lambda_grid must be numbers or 'scaled', got {self.lambda_grid!r}")
        else:
            if len(self.lambda_grid) == 0 or any(not (v >= 0) for v in self.lambda_grid):
                raise InvalidArgument("lambda_grid must be a nonempty list of nonnegative numbers")
            object.__setattr__(self, "lambda_grid", tuple(float(v) for v in self.lambda_grid))
        KernelSpec(self.kernel, 1.0)

    def kernel_spec(self) -> KernelSpec | None:
        if self.mode != "local":
            return None
        if isinstance(self.bandwidth, str):
            raise InvalidArgument("bandwidth is not resolved; run cross_validate or pass a number")
        return KernelSpec(self.kernel, float(self.bandwidth))


@dataclass
class FitReport:
    """Everything computed for one query point."""

    x: np.ndarray
    prediction: QuantileGrid
    f_hat: GridFunction
    f0_hat: GridFunction
    f0_raw: GridFunction
    lam: float
    L: int | None = None
    bandwidth: float | None = None
    discrepancies: np.ndarray | None = None
    selected: tuple = ()
    cv_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class BatchFit:
    """Vectorized transfer fit over many query points.

    Arrays have one row per query. ``selected`` is a boolean ``(q, K)``
    membership mask.
    """

    grid: ProbGrid
    queries: np.ndarray
    predictions: np.ndarray
    f_hat: np.ndarray
    f0_hat: np.ndarray
    f0_raw: np.ndarray
    discrepancies: np.ndarray | None
    selected: np.ndarray
    lam: float
    L: int | None
    bandwidth: float | None
    lo: float
    hi: float
    cv_trace: list = field(default_factory=list)
    weight_sum_residuals: np.ndarray | None = None
    small_sources: tuple = ()

    def __len__(self):
        return self.predictions.shape[0]

    def report(self, i: int) -> FitReport:
        g = self.grid
        return FitReport(
            x=self.queries[i],
            prediction=QuantileGrid(g, self.predictions[i], self.lo, self.hi),
            f_hat=GridFunction(g, self.f_hat[i]),
            f0_hat=GridFunction(g, self.f0_hat[i]),
            f0_raw=GridFunction(g, self.f0_raw[i]),
            lam=self.lam,
            L=self.L,
            bandwidth=self.bandwidth,
            discrepancies=None if self.discrepancies is None else self.discrepancies[i].copy(),
            selected=tuple(int(k) for k in np.flatnonzero(self.selected[i])),
            cv_trace=list(self.cv_trace),
            diagnostics={
                "weight_sum_residuals": ([] if self.weight_sum_residuals is None
                                         else self.weight_sum_residuals[i].tolist()),
                "small_sources": list(self.small_sources),
            },
        )

    def reports(self) -> list[FitReport]:
        return [self.report(i) for i in range(len(self))]


@dataclass
class CVResult:
    lam: float
    L: int | None
    bandwidth: float | None
    trace: list


# ---------------------------------------------------------------------------
# building blocks


def _common_grid(studies: Sequence[Study], grid_size: int) -> ProbGrid:
    for s in studies:
        if not s.sample_mode:
            return s.grid
    return make_grid(grid_size)


def _on_grid(studies: Sequence[Study], grid_size: int) -> list[Study]:
    grid = _common_grid(studies, grid_size)
    return [s.on_grid(grid) for s in studies]


def _estimates(studies: Sequence[Study], queries, mode, kernel, ridge):
    """Per-study ``(q, M)`` estimates and ``(q, len(studies))`` weight-sum residuals."""
    F, resid = [], []
    for s in studies:
        W = weight_matrix(s.covariates, queries, mode, kernel, ridge)
        F.append(W @ s.quantiles / s.n)
        resid.append(W.sum(axis=1) - s.n)
    return F, np.column_stack(resid)


def _aggregate(F0: np.ndarray, n0: int, Fs: Sequence[np.ndarray], ns: Sequence[int],
               mask: np.ndarray | None = None) -> np.ndarray:
    """Sample-size-weighted average of target and (masked) source estimates."""
    num = n0 * F0
    den = np.full(F0.shape[0], float(n0))
    for k, (Fk, nk) in enumerate(zip(Fs, ns)):
        if mask is None:
            num = num + nk * Fk
            den = den + nk
        else:
            m = mask[:, k]
            num = num + (nk * m)[:, None] * Fk
            den = den + nk * m
    return num / den[:, None]


def bias_correct_rows(F0: np.ndarray, Faux: np.ndarray, lam: float,
                      weights: np.ndarray) -> np.ndarray:
    """Row-wise minimizer of ``||g - F0||^2 + lam * ||g - Faux||``."""
    if lam == 0:
        return np.array(F0, dtype=np.float64, copy=True)
    D = F0 - Faux
    r = l2_norm_rows(D, weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(r > lam / 2.0, 1.0 - lam / (2.0 * r), 0.0)
    return Faux + shrink[..., None] * D


def _discrepancy_rows(F0, Fs, weights) -> np.ndarray:
    if not Fs:
        return np.zeros((F0.shape[0], 0))
    return np.column_stack([l2_norm_rows(F0 - Fk, weights) for Fk in Fs])


def _selection_mask(scores: np.ndarray, L: int) -> np.ndarray:
    q, K = scores.shape
    if L > K:
        raise InvalidArgument(f"cannot select L={L} of K={K} sources")
    mask = np.zeros((q, K), dtype=bool)
    if L:
        order = np.argsort(scores, axis=1, kind="stable")[:, :L]
        np.put_along_axis(mask, order, True, axis=1)
    return mask


def _bounds(target: Study, config: TransferConfig) -> tuple[float, float]:
    lo = target.lo if config.lo is None else config.lo
    hi = target.hi if config.hi is None else config.hi
    return float(lo), float(hi)


def silverman_bandwidth(X) -> float:
    x = np.asarray(X, dtype=np.float64).ravel()
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    if not sd > 0:
        raise InvalidArgument("cannot pick a bandwidth for a constant predictor")
    return 1.06 * sd * x.size ** -0.2


def theory_lambda(n0: int, eps: float = 0.05) -> float:
    return float(n0) ** (-0.5 + eps)


# ---------------------------------------------------------------------------
# single-query operations


def aux_estimate(studies: Sequence[Study], x, mode: str = "global",
                 config: TransferConfig | None = None) -> GridFunction:
    """Sample-size-weighted average of the studies' weighted estimates at ``x``."""
    if not studies:
        raise InvalidArgument("aux_estimate needs at least one study")
    config = config or TransferConfig(mode=mode)
    studies = _on_grid(studies, config.grid_size)
    grid = studies[0].grid
    kernel = _single_kernel(config, mode)
    F, _ = _estimates(studies, _one_query(x, studies[0].p), mode, kernel, config.ridge)
    aux = _aggregate(F[0], studies[0].n, F[1:], [s.n for s in studies[1:]])
    return GridFunction(grid, aux[0])


def bias_correct(f0_raw: GridFunction, f_aux: GridFunction, lam: float) -> GridFunction:
    """Closed-form bias-correction step.

    Minimizes ``||g - f0_raw||^2 + lam * ||g - f_aux||`` over grid
    functions. The solution moves from ``f0_raw`` towards ``f_aux`` and
    stops at ``f_aux`` once ``||f0_raw - f_aux|| <= lam / 2``.
    """
    if not lam >= 0:
        raise InvalidArgument(f"lam must be nonnegative, got {lam!r}")
    grid = _same_grid(f0_raw, f_aux)
    out = bias_correct_rows(f0_raw.values[None, :], f_aux.values[None, :], float(lam), grid.weights)
    return GridFunction(grid, out[0])


def select_informative(scores, L: int) -> tuple[int, ...]:
    """Positions of the ``L`` smallest scores; ties go to the lower position."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if int(L) != L or L < 0:
        raise InvalidArgument(f"L must be a nonnegative integer, got {L!r}")
    if L > scores.size:
        raise InvalidArgument(f"cannot select L={L} of K={scores.size} sources")
    order = np.argsort(scores, kind="stable")[: int(L)]
    return tuple(sorted(int(k) for k in order))


def discrepancy_scores(target: Study, sources: Sequence[Study], x, mode: str = "global",
                       config: TransferConfig | None = None) -> np.ndarray:
    """Grid L2 distance between the target's and each source's weighted estimate."""
    config = config or TransferConfig(mode=mode)
    studies = _on_grid([target, *sources], config.grid_size)
    kernel = _single_kernel(config, mode)
    F, _ = _estimates(studies, _one_query(x, target.p), mode, kernel, config.ridge)
    return _discrepancy_rows(F[0], F[1:], studies[0].grid.weights)[0]


def watl_predict(target: Study, sources: Sequence[Study], x,
                 config: TransferConfig | None = None) -> FitReport:
    """Transfer estimate at ``x`` using every source."""
    config = config or TransferConfig()
    return predict_many(target, sources, _one_query(x, target.p), config, adaptive=False).report(0)


def awatl_predict(target: Study, sources: Sequence[Study], x,
                  config: TransferConfig | None = None) -> FitReport:
    """Transfer estimate at ``x`` using only the ``L`` closest sources."""
    config = config or TransferConfig()
    return predict_many(target, sources, _one_query(x, target.p), config, adaptive=True).report(0)


def _one_query(x, p: int) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != p:
        raise InvalidArgument(f"query has {z.shape[1]} coordinates, covariates have {p}")
    return z


def _single_kernel(config: TransferConfig, mode: str) -> KernelSpec | None:
    if mode != "local":
        return None
    if isinstance(config.bandwidth, str):
        raise InvalidArgument("pass a numeric bandwidth for single-step local estimates")
    return KernelSpec(config.kernel, float(config.bandwidth))


# ---------------------------------------------------------------------------
# batched engine


def _fit_core(target: Study, sources: Sequence[Study], queries: np.ndarray, *,
              mode: str, kernel: KernelSpec | None, ridge, lams: Sequence[float],
              Ls: Sequence[int | None], shared_selection: bool, lo: float, hi: float):
    """Yield ``(L, lam, predictions, pieces)`` for every ``(L, lam)`` pair."""
    studies = [target, *sources]
    F, resid = _estimates(studies, queries, mode, kernel, ridge)
    F0, Fs = F[0], F[1:]
    w = target.grid.weights
    ns = [s.n for s in sources]
    scores = None
    if any(L is not None for L in Ls):
        scores = _discrepancy_rows(F0, Fs, w)
    for L in Ls:
        if L is None:
            mask = np.ones((queries.shape[0], len(sources)), dtype=bool)
        else:
            basis = scores
            if shared_selection:
                basis = np.broadcast_to(scores.mean(axis=0), scores.shape)
            mask = _selection_mask(basis, L)
        aux = _aggregate(F0, target.n, Fs, ns, mask)
        for lam in lams:
            f0_hat = bias_correct_rows(F0, aux, lam, w)
            pred = project_values(f0_hat, w, lo, hi)
            yield L, lam, pred, dict(F0=F0, aux=aux, f0_hat=f0_hat, scores=scores,
                                     mask=mask, resid=resid)


def predict_many(target: Study, sources: Sequence[Study], queries,
                 config: TransferConfig | None = None, adaptive: bool = False) -> BatchFit:
    """Transfer estimates at every query point.

    ``"cv"`` and ``"theory"`` hyperparameters are resolved once, from the
    target data, before predicting.
    """
    config = config or TransferConfig()
    studies = _on_grid([target, *sources], config.grid_size)
    target, sources = studies[0], studies[1:]
    for s in sources:
        if s.p != target.p:
            raise InvalidArgument(
                f"source {s.label!r} has {s.p} covariates, target has {target.p}")
    if config.mode == "local" and target.p != 1:
        raise InvalidArgument(
            f"local mode supports a scalar predictor only, got p={target.p}")
    if adaptive and not isinstance(config.L, str) and config.L > len(sources):
        raise InvalidArgument(f"cannot select L={config.L} of K={len(sources)} sources")
    Z = _queries(queries, target.p)
    lo, hi = _bounds(target, config)

    trace: list = []
    needs_cv = (config.lam == "cv" or (adaptive and config.L == "cv")
                or (config.mode == "local" and config.bandwidth == "cv"))
    if needs_cv:
        cv = cross_validate(target, sources, config, adaptive=adaptive)
        lam, L, h, trace = cv.lam, cv.L, cv.bandwidth, cv.trace
    else:
        lam = theory_lambda(target.n, config.theory_eps) if config.lam == "theory" else float(config.lam)
        L = int(config.L) if adaptive else None
        h = _resolve_bandwidth(target, config)
    kernel = KernelSpec(config.kernel, h) if config.mode == "local" else None

    ((_, _, pred, parts),) = list(_fit_core(
        target, sources, Z, mode=config.mode, kernel=kernel, ridge=config.ridge,
        lams=[lam], Ls=[L], shared_selection=config.shared_selection, lo=lo, hi=hi))
    total = target.n + sum(s.n for s in sources)
    small = tuple(k for k, s in enumerate(sources) if s.n < math.sqrt(total))
    return BatchFit(
        grid=target.grid, queries=Z, predictions=pred, f_hat=parts["aux"],
        f0_hat=parts["f0_hat"], f0_raw=parts["F0"], discrepancies=parts["scores"],
        selected=parts["mask"], lam=lam, L=L, bandwidth=h, lo=lo, hi=hi, cv_trace=trace,
        weight_sum_residuals=parts["resid"], small_sources=small)


def _resolve_bandwidth(target: Study, config: TransferConfig) -> float | None:
    if config.mode != "local":
        return None
    if config.bandwidth == "silverman" or config.bandwidth == "cv":
        return silverman_bandwidth(target.covariates)
    return float(config.bandwidth)


def bandwidth_candidates(target: Study, config: TransferConfig) -> list[float]:
    if config.bandwidth_grid is not None:
        return [float(h) for h in config.bandwidth_grid]
    h0 = silverman_bandwidth(target.covariates)
    return [float(h) for h in h0 * np.geomspace(0.5, 4.0, 7)]


def fold_assignment(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded partition of ``range(n)`` into ``folds`` nearly equal parts."""
    if n // folds < 2:
        raise InvalidArgument(
            f"{n} target rows cannot fill {folds} folds with at least 2 rows each")
    perm = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC5])).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, folds)]


def scaled_lambda_grid(target: Study, sources: Sequence[Study],
                       config: TransferConfig | None = None,
                       points: int = SCALED_GRID_POINTS) -> list[float]:
    """Equispaced ``lam`` candidates on ``[0, 2 * median(r)]``.

    ``r`` is the distance between the target-only and the all-source
    aggregate global estimates at the target's own covariates. Shrinkage
    switches off entirely once ``lam >= 2 r``, so this range covers full
    aggregation at half the design points and partial shrinkage elsewhere,
    whatever the scale of the responses.
    """
    config = config or TransferConfig()
    if not sources:
        return [0.0]
    F, _ = _estimates([target, *sources], target.covariates, "global", None, config.ridge)
    aux = _aggregate(F[0], target.n, F[1:], [s.n for s in sources])
    top = 2.0 * float(np.median(l2_norm_rows(F[0] - aux, target.grid.weights)))
    if not top > 0:
        return [0.0]
    return [float(v) for v in np.linspace(0.0, top, points)]


def cross_validate(target: Study, sources: Sequence[Study],
                   config: TransferConfig | None = None, adaptive: bool = False) -> CVResult:
    """Choose ``lam`` (and ``L``, and the bandwidth in local mode) by K-fold CV.

    Target rows are split into seeded folds. For every candidate the
    estimator is refitted on the remaining target rows plus all sources and
    scored by the mean squared Wasserstein distance between predictions at
    the held-out covariates and the held-out responses. Ties go to the
    smaller ``lam``, then the smaller ``L``, then the smaller bandwidth.
    Candidates whose kernel window degenerates score ``inf``.
    """
    config = config or TransferConfig()
    studies = _on_grid([target, *sources], config.grid_size)
    target, sources = studies[0], studies[1:]
    lo, hi = _bounds(target, config)
    K = len(sources)

    if config.lam == "cv":
        lams = list(config.lambda_grid) if not isinstance(config.lambda_grid, str) \
            else scaled_lambda_grid(target, sources, config)
    elif config.lam == "theory":
        lams = [theory_lambda(target.n, config.theory_eps)]
    else:
        lams = [float(config.lam)]
    if not adaptive:
        Ls: list = [None]
    elif config.L == "cv":
        Ls = list(range(K + 1))
    else:
        if config.L > K:
            raise InvalidArgument(f"cannot select L={config.L} of K={K} sources")
        Ls = [int(config.L)]
    if config.mode != "local":
        hs: list = [None]
    elif config.bandwidth == "cv":
        hs = bandwidth_candidates(target, config)
    else:
        hs = [_resolve_bandwidth(target, config)]

    folds = fold_assignment(target.n, config.cv_folds, config.seed)
    w = target.grid.weights
    loss = {key: 0.0 for key in itertools.product(hs, Ls, lams)}
    for held in folds:
        train = target.subset(np.setdiff1d(np.arange(target.n), held))
        Xh = target.covariates[held]
        Qh = target.quantiles[held]
        for h in hs:
            kernel = KernelSpec(config.kernel, h) if h is not None else None
            try:
                for L, lam, pred, _ in _fit_core(
                        train, sources, Xh, mode=config.mode, kernel=kernel, ridge=config.ridge,
                        lams=lams, Ls=Ls, shared_selection=config.shared_selection, lo=lo, hi=hi):
                    loss[(h, L, lam)] += float(np.sum((pred - Qh) ** 2 @ w))
            except DegenerateWindowError:
                for L, lam in itertools.product(Ls, lams):
                    loss[(h, L, lam)] = math.inf

    trace = [
        {"lam": lam, "L": L, "bandwidth": h, "score": loss[(h, L, lam)] / target.n}
        for h, L, lam in loss
    ]
    finite = [t["score"] for t in trace if math.isfinite(t["score"])]
    if not finite:
        raise DegenerateWindowError("every candidate bandwidth produced a degenerate kernel window")
    best = min(finite)
    tied = [t for t in trace if t["score"] <= best * (1 + 1e-12) + 1e-300]
    pick = min(tied, key=lambda t: (t["lam"], -1 if t["L"] is None else t["L"],
                                    -1.0 if t["bandwidth"] is None else t["bandwidth"]))
    return CVResult(lam=pick["lam"], L=pick["L"], bandwidth=pick["bandwidth"], trace=trace)


def with_fixed(config: TransferConfig, cv: CVResult) -> TransferConfig:
    """Copy of ``config`` with CV-chosen values filled in."""
    updates = {"lam": cv.lam}
    if cv.L is not None:
        updates["L"] = cv.L
    if cv.bandwidth is not None:
        updates["bandwidth"] = cv.bandwidth
    return replace(config, **updates)
