"""Global and local Fréchet regression weights and the estimators built on them.

Every estimator here has the same shape: a weight per observation, a
weighted average of the observed quantile functions, and (for predictions)
a projection back onto valid quantile functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .errors import DegenerateWindowError, InvalidArgument, SingularMatrixError
from .study import Study, as_covariates
from .wasserstein import GridFunction, QuantileGrid, _same_grid, project_values

MODES = ("global", "local")
KERNELS = ("gaussian", "epanechnikov")

# relative floor on u0*u2 - u1^2, i.e. on 1 - corr^2 of the kernel moments
_WINDOW_FLOOR = 1e-10
# relative floor on Cholesky pivots of cov + ridge * I
_PIVOT_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    family: str = "gaussian"
    h: float = 1.0

    def __post_init__(self):
        if self.family not in KERNELS:
            raise InvalidArgument(f"unknown kernel {self.family!r}; choose from {KERNELS}")
        if not (self.h > 0 and math.isfinite(self.h)):
            raise InvalidArgument(f"bandwidth must be positive, got {self.h!r}")

    def __call__(self, d: np.ndarray) -> np.ndarray:
        """Scaled kernel ``K_h(d) = K(d / h) / h``."""
        t = np.asarray(d, dtype=np.float64) / self.h
        if self.family == "gaussian":
            k = np.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi)
        else:
            k = np.where(np.abs(t) < 1.0, 0.75 * (1.0 - t * t), 0.0)
        return k / self.h


def default_ridge(cov: np.ndarray) -> float:
    return 1e-8 * float(np.trace(cov)) / cov.shape[0]


@dataclass(frozen=True, eq=False)
class MomentCache:
    """Covariate mean, covariance and regularized inverse of one study."""

    mean: np.ndarray
    cov: np.ndarray
    cov_inv: np.ndarray
    ridge: float
    degenerate: bool = False

    @classmethod
    def from_covariates(cls, X, ridge: float | None = None) -> "MomentCache":
        """Compute moments; ``ridge=None`` uses ``1e-8 * trace(cov) / p``.

        Raises:
            SingularMatrixError: if ``cov + ridge * I`` is not positive
                definite and the centred design is not identically zero.
        """
        X = as_covariates(X)
        n, p = X.shape
        mean = X.mean(axis=0)
        C = X - mean
        cov = C.T @ C / n
        cov = 0.5 * (cov + cov.T)
        if ridge is None:
            ridge = default_ridge(cov)
        if ridge < 0:
            raise InvalidArgument("ridge must be nonnegative")
        if not np.any(C):
            # every centred row is zero so the quadratic form vanishes
            return cls(mean, cov, np.zeros((p, p)), float(ridge), degenerate=True)
        try:
            factor = cho_factor(cov + ridge * np.eye(p), lower=True)
        except LinAlgError as exc:
            raise SingularMatrixError(
                f"covariate covariance is singular (ridge={ridge:g}); "
                "pass a positive ridge or drop collinear columns") from exc
        pivots = np.diag(factor[0]) ** 2
        if np.any(pivots <= _PIVOT_FLOOR * float(np.max(np.diag(cov)))):
            raise SingularMatrixError(
                f"covariate covariance is numerically singular (ridge={ridge:g}); "
                "pass a positive ridge or drop collinear columns")
        cov_inv = cho_solve(factor, np.eye(p))
        return cls(mean, cov, 0.5 * (cov_inv + cov_inv.T), float(ridge))

    def weights(self, X, queries) -> np.ndarray:
        """``(q, n)`` matrix of global weights for the rows of ``queries``."""
        X = as_covariates(X)
        Z = _queries(queries, X.shape[1])
        return 1.0 + (Z - self.mean) @ self.cov_inv @ (X - self.mean).T


def _queries(queries, p: int) -> np.ndarray:
    Z = np.atleast_1d(np.asarray(queries, dtype=np.float64))
    if Z.ndim == 1:
        Z = Z[:, None] if p == 1 else Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != p:
        raise InvalidArgument(f"query dimension {Z.shape[-1]} does not match covariate dimension {p}")
    if not np.all(np.isfinite(Z)):
        raise InvalidArgument("query points must be finite")
    return Z


def global_weights(X, x, ridge: float | None = None) -> np.ndarray:
    """Global Fréchet regression weights ``1 + (X_i - mean)' S^-1 (x - mean)``.

    ``S`` is the (ridge-regularized) empirical covariance with divisor ``n``.
    Weights can be negative. They sum to ``n`` whenever ``ridge`` is 0.
    """
    X = as_covariates(X)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return MomentCache.from_covariates(X, ridge).weights(X, x)[0]


def global_weight_matrix(X, queries, ridge: float | None = None) -> np.ndarray:
    X = as_covariates(X)
    return MomentCache.from_covariates(X, ridge).weights(X, queries)


def local_weight_matrix(X, queries, kernel: KernelSpec) -> np.ndarray:
    """``(q, n)`` local-linear Fréchet weights for a scalar predictor.

    Raises:
        InvalidArgument: for more than one covariate column.
        DegenerateWindowError: if the kernel window around some query
            leaves no spread to fit a local line.
    """
    X = as_covariates(X)
    if X.shape[1] != 1:
        raise InvalidArgument(
            f"local Fréchet regression supports a scalar predictor only, got p={X.shape[1]}")
    z = _queries(queries, 1)[:, 0]
    D = X[:, 0][None, :] - z[:, None]
    Kd = kernel(D)
    u0 = Kd.mean(axis=1)
    u1 = (Kd * D).mean(axis=1)
    u2 = (Kd * D * D).mean(axis=1)
    sigma0 = u0 * u2 - u1 * u1
    scale = u0 * u2
    bad = ~(np.isfinite(sigma0) & (scale > 0) & (sigma0 > _WINDOW_FLOOR * scale))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise DegenerateWindowError(
            f"degenerate kernel window at x={z[i]:g} with bandwidth h={kernel.h:g}: "
            "too few distinct covariates carry kernel mass")
    return Kd * (u2[:, None] - u1[:, None] * D) / sigma0[:, None]


def local_weights(X, x: float, kernel: KernelSpec) -> np.ndarray:
    """Local-linear Fréchet weights at a single scalar query ``x``."""
    return local_weight_matrix(X, [float(x)], kernel)[0]


def weight_matrix(X, queries, mode: str = "global", kernel: KernelSpec | None = None,
                  ridge: float | None = None) -> np.ndarray:
    if mode == "global":
        return global_weight_matrix(X, queries, ridge)
    if mode == "local":
        if kernel is None:
            raise InvalidArgument("local mode needs a kernel")
        return local_weight_matrix(X, queries, kernel)
    raise InvalidArgument(f"mode must be one of {MODES}, got {mode!r}")


def weighted_quantile_estimate(weights, qs: Sequence[QuantileGrid]) -> GridFunction:
    """``(1/n) * sum_i weights[i] * qs[i]``; not necessarily monotone."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(qs) == 0 or weights.shape != (len(qs),):
        raise InvalidArgument(f"{weights.shape} weights for {len(qs)} responses")
    grid = _same_grid(*qs)
    Q = np.stack([q.values for q in qs])
    return GridFunction(grid, weights @ Q / len(qs))


def estimate_matrix(study: Study, queries, mode: str = "global",
                    kernel: KernelSpec | None = None, ridge: float | None = None) -> np.ndarray:
    """Unprojected weighted estimates of ``study`` at every query, ``(q, M)``."""
    W = weight_matrix(study.covariates, queries, mode, kernel, ridge)
    return W @ study.quantiles / study.n


def baseline_predict(study: Study, x, mode: str = "global", *,
                     kernel: KernelSpec | None = None, ridge: float | None = None,
                     lo: float | None = None, hi: float | None = None) -> QuantileGrid:
    """Plain Fréchet regression fitted on a single study.

    Serves as the Only Target, Only Source and pooled baselines depending on
    which study is passed in. Bounds default to the study's support.
    """
    if study.sample_mode:
        raise InvalidArgument("convert sample-mode studies with Study.on_grid first")
    lo = study.lo if lo is None else lo
    hi = study.hi if hi is None else hi
    query = np.asarray(x, dtype=np.float64).reshape(1, -1)
    est = estimate_matrix(study, query, mode, kernel, ridge)[0]
    return QuantileGrid(study.grid, project_values(est, study.grid.weights, lo, hi), lo, hi)
