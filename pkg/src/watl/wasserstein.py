"""Univariate Wasserstein geometry on a fixed quadrature grid.

Distributions are stored as quantile functions evaluated on the nodes of a
:class:`ProbGrid`. Under this encoding the 2-Wasserstein distance is the
weighted L2 distance between value vectors, Fréchet means are pointwise
averages, and the nearest valid distribution to an arbitrary vector is a
weighted isotonic regression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument

DEFAULT_GRID_SIZE = 500


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ProbGrid:
    """Quadrature nodes on (0, 1) and their weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = _frozen(self.nodes)
        weights = _frozen(self.weights)
        if nodes.ndim != 1 or nodes.shape != weights.shape or nodes.size < 1:
            raise InvalidArgument("nodes and weights must be 1-D arrays of equal, nonzero length")
        if not (nodes[0] > 0.0 and nodes[-1] < 1.0 and np.all(np.diff(nodes) > 0)):
            raise InvalidArgument("nodes must be strictly increasing inside (0, 1)")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise InvalidArgument("weights must be positive and sum to 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def M(self) -> int:
        return self.nodes.size

    def __len__(self):
        return self.nodes.size

    def __eq__(self, other):
        if self is other:
            return True
        if not isinstance(other, ProbGrid):
            return NotImplemented
        return (self.M == other.M
                and np.array_equal(self.nodes, other.nodes)
                and np.array_equal(self.weights, other.weights))

    def __hash__(self):
        return hash((self.M, self.nodes.tobytes()))

    def __repr__(self):
        return f"ProbGrid(M={self.M})"


def make_grid(M: int = DEFAULT_GRID_SIZE) -> ProbGrid:
    """Midpoint rule with ``M`` equispaced nodes ``(j + 0.5) / M``."""
    if isinstance(M, bool) or int(M) != M or M < 2:
        raise InvalidArgument(f"grid size must be an integer >= 2, got {M!r}")
    M = int(M)
    nodes = (np.arange(M, dtype=np.float64) + 0.5) / M
    return ProbGrid(nodes, np.full(M, 1.0 / M))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """An element of L2(0, 1) evaluated on a grid."""

    grid: ProbGrid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values)
        if values.shape != (self.grid.M,):
            raise InvalidArgument(
                f"expected {self.grid.M} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("grid function values must be finite")
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, GridFunction):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.values, other.values)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class QuantileGrid(GridFunction):
    """Quantile function of a distribution, sampled on a grid.

    ``lo`` and ``hi`` are optional support bounds; infinite bounds mean
    unconstrained.
    """

    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        super().__post_init__()
        _check_bounds(self.lo, self.hi)
        v = self.values
        if np.any(np.diff(v) < 0):
            j = int(np.flatnonzero(np.diff(v) < 0)[0])
            raise InvalidArgument(
                f"quantile values must be nondecreasing; values[{j}]={v[j]!r} > values[{j + 1}]={v[j + 1]!r}")
        if v.size and (v[0] < self.lo or v[-1] > self.hi):
            raise InvalidArgument(f"quantile values leave the support [{self.lo}, {self.hi}]")

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.lo) or math.isfinite(self.hi)


def _check_bounds(lo, hi):
    if math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise InvalidArgument(f"invalid support bounds [{lo}, {hi}]")


def _same_grid(*fs: GridFunction) -> ProbGrid:
    grid = fs[0].grid
    for f in fs[1:]:
        if f.grid != grid:
            raise InvalidArgument("grid functions live on different grids")
    return grid


def is_monotone(values) -> bool:
    return bool(np.all(np.diff(values) >= 0))


def l2_distance(f: GridFunction, g: GridFunction) -> float:
    """Weighted L2 distance between two grid functions."""
    grid = _same_grid(f, g)
    diff = f.values - g.values
    return math.sqrt(float(np.dot(grid.weights, diff * diff)))


def l2_norm_rows(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Grid L2 norm of every row of a 2-D array."""
    return np.sqrt(np.einsum("...j,j->...", values * values, weights))


def wasserstein_distance(q1: GridFunction, q2: GridFunction) -> float:
    """2-Wasserstein distance between two distributions given by quantiles.

    Raises:
        InvalidArgument: if the grids differ or either input is not
            nondecreasing.
    """
    _same_grid(q1, q2)
    for name, q in (("q1", q1), ("q2", q2)):
        if not is_monotone(q.values):
            raise InvalidArgument(f"{name} is not a valid quantile function (not monotone)")
    return l2_distance(q1, q2)


def frechet_mean(qs: Sequence[GridFunction], w: Sequence[float] | None = None) -> GridFunction:
    """Weighted pointwise average of quantile functions.

    With nonnegative weights the result is itself a quantile function; with
    signed weights it may not be, and callers should project it.
    """
    if len(qs) == 0:
        raise InvalidArgument("frechet_mean needs at least one element")
    grid = _same_grid(*qs)
    w = np.ones(len(qs)) if w is None else np.asarray(w, dtype=np.float64)
    if w.shape != (len(qs),):
        raise InvalidArgument("weights and distributions differ in length")
    total = w.sum()
    if total == 0:
        raise InvalidArgument("weights sum to zero")
    values = w @ np.stack([q.values for q in qs]) / total
    return GridFunction(grid, values)


def pava(y: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted least-squares nondecreasing fit by pool-adjacent-violators.

    Args:
        y: values to fit.
        w: positive weights, same length as ``y``.

    Returns:
        The unique nondecreasing vector minimizing ``sum(w * (y - fit)**2)``.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.size < 2 or np.all(y[1:] >= y[:-1]):
        return y.copy()
    means: list[float] = []
    mass: list[float] = []
    count: list[int] = []
    for yi, wi in zip(y.tolist(), np.asarray(w, dtype=np.float64).tolist()):
        means.append(yi)
        mass.append(wi)
        count.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m, s, c = means.pop(), mass.pop(), count.pop()
            total = mass[-1] + s
            means[-1] = (means[-1] * mass[-1] + m * s) / total
            mass[-1] = total
            count[-1] += c
    return np.repeat(means, count)


def project_values(values: np.ndarray, weights: np.ndarray,
                   lo: float = -math.inf, hi: float = math.inf) -> np.ndarray:
    """Project one vector or each row of a matrix onto the bounded monotone cone."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        out = pava(values, weights)
    else:
        out = np.empty_like(values)
        for i, row in enumerate(values):
            out[i] = pava(row, weights)
    if math.isfinite(lo) or math.isfinite(hi):
        np.clip(out, lo, hi, out=out)
    return out


def project_to_quantile(g: GridFunction, lo: float = -math.inf,
                        hi: float = math.inf) -> QuantileGrid:
    """Nearest valid quantile function to ``g`` in the grid L2 metric.

    Weighted isotonic regression with the grid's quadrature weights,
    followed by clipping to ``[lo, hi]``.
    """
    _check_bounds(lo, hi)
    return QuantileGrid(g.grid, project_values(g.values, g.grid.weights, lo, hi), lo, hi)


def empirical_quantile_values(ys, nodes: np.ndarray) -> np.ndarray:
    """Left-continuous empirical quantile of ``ys`` at each node.

    The value at ``u`` is the ``ceil(u * N)``-th order statistic.
    """
    ys = np.sort(np.asarray(ys, dtype=np.float64).ravel())
    N = ys.size
    if N == 0:
        raise InvalidArgument("cannot build a quantile function from an empty sample")
    if not np.all(np.isfinite(ys)):
        raise InvalidArgument("samples must be finite")
    # guard against u*N landing a rounding error above an integer
    rank = np.ceil(nodes * N - 1e-12 * N).astype(np.int64)
    return ys[np.clip(rank, 1, N) - 1]


def quantile_from_samples(ys, grid: ProbGrid, lo: float = -math.inf,
                          hi: float = math.inf) -> QuantileGrid:
    """Quantile grid of the empirical measure of ``ys``."""
    return QuantileGrid(grid, empirical_quantile_values(ys, grid.nodes), lo, hi)
