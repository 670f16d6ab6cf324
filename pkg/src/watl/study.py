"""The :class:`Study` container: covariates plus distributional responses."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidArgument
from .wasserstein import (
    ProbGrid,
    QuantileGrid,
    _check_bounds,
    empirical_quantile_values,
)

ROLES = ("target", "source")


def as_covariates(X) -> np.ndarray:
    """Coerce to a finite ``(n, p)`` float array."""
    X = np.array(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise InvalidArgument(f"covariates must be an (n, p) array with n, p >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidArgument("covariates must be finite")
    X.flags.writeable = False
    return X


@dataclass(frozen=True, eq=False)
class Study:
    """One data site.

    Exactly one of ``quantiles`` (an ``(n, M)`` matrix on ``grid``) or
    ``samples`` (``n`` raw observation vectors) is set. Build instances with
    :meth:`from_quantiles` or :meth:`from_samples`.
    """

    covariates: np.ndarray
    quantiles: np.ndarray | None = None
    grid: ProbGrid | None = None
    samples: tuple | None = None
    label: str = ""
    role: str = "source"
    lo: float = -math.inf
    hi: float = math.inf

    def __post_init__(self):
        X = as_covariates(self.covariates)
        object.__setattr__(self, "covariates", X)
        if self.role not in ROLES:
            raise InvalidArgument(f"role must be one of {ROLES}, got {self.role!r}")
        _check_bounds(self.lo, self.hi)
        if (self.quantiles is None) == (self.samples is None):
            raise InvalidArgument("a study holds either quantile grids or raw samples, not both")
        if self.quantiles is not None:
            if self.grid is None:
                raise InvalidArgument("quantile-mode study needs its grid")
            Q = np.array(self.quantiles, dtype=np.float64)
            if Q.shape != (X.shape[0], self.grid.M):
                raise InvalidArgument(
                    f"expected {X.shape[0]} responses of length {self.grid.M}, got shape {Q.shape}")
            if not np.all(np.isfinite(Q)):
                raise InvalidArgument("quantile values must be finite")
            bad = np.flatnonzero(np.any(np.diff(Q, axis=1) < 0, axis=1))
            if bad.size:
                raise InvalidArgument(f"response {int(bad[0])} is not monotone nondecreasing")
            if np.any(Q < self.lo) or np.any(Q > self.hi):
                raise InvalidArgument(f"responses leave the declared support [{self.lo}, {self.hi}]")
            Q.flags.writeable = False
            object.__setattr__(self, "quantiles", Q)
        else:
            samples = tuple(np.array(s, dtype=np.float64).ravel() for s in self.samples)
            if len(samples) != X.shape[0]:
                raise InvalidArgument(f"{X.shape[0]} covariate rows but {len(samples)} sample vectors")
            for i, s in enumerate(samples):
                if s.size == 0:
                    raise InvalidArgument(f"sample vector {i} is empty")
                s.flags.writeable = False
            object.__setattr__(self, "samples", samples)

    @classmethod
    def from_quantiles(cls, covariates, responses, grid: ProbGrid | None = None,
                       **kwargs) -> "Study":
        """Build from a list of :class:`QuantileGrid` or an ``(n, M)`` array."""
        if len(responses) and isinstance(responses[0], QuantileGrid):
            grid = responses[0].grid if grid is None else grid
            for q in responses:
                if q.grid != grid:
                    raise InvalidArgument("responses live on different grids")
            responses = np.stack([q.values for q in responses])
        return cls(covariates, quantiles=responses, grid=grid, **kwargs)

    @classmethod
    def from_samples(cls, covariates, samples: Sequence, **kwargs) -> "Study":
        return cls(covariates, samples=tuple(samples), **kwargs)

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def sample_mode(self) -> bool:
        return self.samples is not None

    def on_grid(self, grid: ProbGrid) -> "Study":
        """Quantile-mode view of this study on ``grid``.

        Sample-mode studies are converted through their empirical quantile
        functions.
        """
        if not self.sample_mode:
            if self.grid != grid:
                raise InvalidArgument(
                    f"study {self.label!r} lives on {self.grid!r}, requested {grid!r}")
            return self
        Q = np.stack([empirical_quantile_values(s, grid.nodes) for s in self.samples])
        return Study(self.covariates, quantiles=Q, grid=grid, label=self.label,
                     role=self.role, lo=self.lo, hi=self.hi)

    def responses(self) -> list[QuantileGrid]:
        if self.sample_mode:
            raise InvalidArgument("sample-mode study has no grid; call on_grid first")
        return [QuantileGrid(self.grid, q, self.lo, self.hi) for q in self.quantiles]

    def subset(self, rows) -> "Study":
        rows = np.asarray(rows)
        if self.sample_mode:
            return Study(self.covariates[rows], samples=tuple(self.samples[i] for i in rows),
                         label=self.label, role=self.role, lo=self.lo, hi=self.hi)
        return Study(self.covariates[rows], quantiles=self.quantiles[rows], grid=self.grid,
                     label=self.label, role=self.role, lo=self.lo, hi=self.hi)

    def __eq__(self, other):
        if not isinstance(other, Study):
            return NotImplemented
        same = (self.label == other.label and self.role == other.role
                and self.lo == other.lo and self.hi == other.hi
                and np.array_equal(self.covariates, other.covariates)
                and self.sample_mode == other.sample_mode)
        if not same:
            return False
        if self.sample_mode:
            return all(np.array_equal(a, b) for a, b in zip(self.samples, other.samples))
        return self.grid == other.grid and np.array_equal(self.quantiles, other.quantiles)

    __hash__ = None


def pool(studies: Sequence[Study], label: str = "pooled", role: str = "source") -> Study:
    """Concatenate several quantile-mode studies into one."""
    if not studies:
        raise InvalidArgument("nothing to pool")
    grid = studies[0].grid
    if any(s.sample_mode or s.grid != grid for s in studies):
        raise InvalidArgument("pooling requires quantile-mode studies on one grid")
    lo = min(s.lo for s in studies)
    hi = max(s.hi for s in studies)
    return Study(np.vstack([s.covariates for s in studies]),
                 quantiles=np.vstack([s.quantiles for s in studies]), grid=grid,
                 label=label, role=role, lo=lo, hi=hi)
