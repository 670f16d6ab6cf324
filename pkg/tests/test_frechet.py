import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from watl.errors import DegenerateWindowError, InvalidArgument, SingularMatrixError
from watl.frechet import (
    KernelSpec,
    MomentCache,
    baseline_predict,
    global_weight_matrix,
    global_weights,
    local_weight_matrix,
    local_weights,
    weighted_quantile_estimate,
)
from watl.simulation import generate_study, rmspr_matrix, true_regression_matrix
from watl.study import Study
from watl.wasserstein import QuantileGrid, make_grid


def test_global_weights_hand_example():
    # mean 1, variance 2/3, so s_i = 1 + 1.5 (X_i - 1) at x = 2
    np.testing.assert_allclose(global_weights([[0.0], [1.0], [2.0]], [2.0], ridge=0.0), [-0.5, 1.0, 2.5],
                               atol=1e-14)


def test_global_weights_direct_formula():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 3))
    x = rng.normal(size=3)
    C = X - X.mean(0)
    S = C.T @ C / 30
    direct = 1 + C @ np.linalg.solve(S, x - X.mean(0))
    np.testing.assert_allclose(global_weights(X, x, ridge=0.0), direct, rtol=1e-10)


def test_global_weights_at_mean_are_one():
    X = np.random.default_rng(4).normal(size=(15, 2))
    np.testing.assert_allclose(global_weights(X, X.mean(0)), 1.0, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 80), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_global_weights_sum_to_n(n, p, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * rng.uniform(0.1, 10, size=p)
    if n <= p:
        return
    s = global_weights(X, rng.normal(size=p) * 3, ridge=0.0)
    assert abs(s.sum() - n) <= 1e-8 * n


def test_zero_spread_design_gives_unit_weights():
    np.testing.assert_array_equal(global_weights(np.full((4, 1), 2.0), [5.0]), np.ones(4))


def test_collinear_design_without_ridge_is_singular():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(SingularMatrixError):
        MomentCache.from_covariates(X, ridge=0.0)
    # a ridge makes it solvable
    assert np.isfinite(global_weights(X, [1.0, 1.0], ridge=1e-6)).all()


def test_weight_matrix_rows_match_single_queries():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(12, 2))
    Z = rng.normal(size=(4, 2))
    W = global_weight_matrix(X, Z)
    for i in range(4):
        np.testing.assert_allclose(W[i], global_weights(X, Z[i]), rtol=1e-12)


# local weights --------------------------------------------------------------

@settings(max_examples=100, deadline=None)
@given(st.integers(4, 60), st.integers(0, 2**31 - 1), st.sampled_from(["gaussian", "epanechnikov"]))
def test_local_weights_average_one(n, seed, family):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=n)
    x = float(rng.uniform(0.1, 0.9))
    h = 2.0 if family == "epanechnikov" else float(rng.uniform(0.05, 1.0))
    s = local_weights(X[:, None], x, KernelSpec(family, h))
    assert abs(s.mean() - 1.0) <= 1e-8


def test_local_weights_symmetric_design():
    s = local_weights([[-0.7], [0.7]], 0.0, KernelSpec("gaussian", 0.5))
    assert s[0] == pytest.approx(s[1], rel=1e-14)


def test_local_weights_large_bandwidth_tend_to_global():
    X = np.random.default_rng(6).uniform(size=(25, 1))
    h = 1e3 * float(np.ptp(X))
    np.testing.assert_allclose(local_weights(X, 0.3, KernelSpec("gaussian", h)), global_weights(X, 0.3),
                               atol=1e-3)


def test_local_weights_degenerate_window():
    X = np.array([[0.0], [0.05], [0.9], [1.0]])
    with pytest.raises(DegenerateWindowError):
        local_weights(X, 0.5, KernelSpec("epanechnikov", 0.1))


def test_local_weights_require_scalar_predictor():
    with pytest.raises(InvalidArgument):
        local_weight_matrix(np.zeros((5, 2)), [[0.1, 0.2]], KernelSpec())


def test_kernel_rejects_bad_bandwidth():
    with pytest.raises(InvalidArgument):
        KernelSpec("gaussian", 0.0)
    with pytest.raises(InvalidArgument):
        KernelSpec("box", 1.0)


# estimates ------------------------------------------------------------------

def _study(Q, X=None):
    Q = np.asarray(Q, dtype=float)
    X = np.arange(Q.shape[0], dtype=float)[:, None] if X is None else X
    return Study(X, quantiles=Q, grid=make_grid(Q.shape[1]))


def test_weighted_estimate_unit_weights_is_mean():
    g = make_grid(4)
    qs = [QuantileGrid(g, np.arange(4.0) + c) for c in (0, 1, 5)]
    np.testing.assert_allclose(weighted_quantile_estimate(np.ones(3), qs).values, np.arange(4.0) + 2)


def test_weighted_estimate_one_hot_selects():
    g = make_grid(4)
    qs = [QuantileGrid(g, np.arange(4.0) * c) for c in (1, 2, 3)]
    np.testing.assert_array_equal(weighted_quantile_estimate(np.array([0, 3.0, 0]), qs).values, qs[1].values)


def test_weighted_estimate_matches_double_loop():
    rng = np.random.default_rng(7)
    g = make_grid(5)
    qs = [QuantileGrid(g, np.sort(rng.normal(size=5))) for _ in range(3)]
    w = rng.normal(size=3)
    direct = np.zeros(5)
    for j in range(5):
        for i in range(3):
            direct[j] += w[i] * qs[i].values[j] / 3
    np.testing.assert_allclose(weighted_quantile_estimate(w, qs).values, direct, atol=1e-12)


def test_baseline_single_unit():
    q = np.array([[0.1, 0.4, 0.5]])
    pred = baseline_predict(_study(q), [3.0])
    np.testing.assert_allclose(pred.values, q[0])


def test_baseline_constant_responses():
    q = np.tile([0.1, 0.3, 0.8], (6, 1))
    for x in (-4.0, 0.5, 10.0):
        np.testing.assert_allclose(baseline_predict(_study(q), [x]).values, q[0], atol=1e-12)


def test_baseline_output_is_projected():
    q = np.array([[0.0, 0.1, 0.2], [0.0, 1.0, 2.0], [0.0, 0.0, 0.0]])
    pred = baseline_predict(_study(q), [5.0])
    assert np.all(np.diff(pred.values) >= 0)


def test_baseline_large_target_is_consistent():
    g = make_grid(100)
    target = generate_study(0, 0.0, 2000, seed=1, grid=g)
    xs = np.random.default_rng(2).uniform(size=100)
    P = np.stack([baseline_predict(target, [x]).values for x in xs])
    assert rmspr_matrix(P, true_regression_matrix(xs, 0.0, g), g.weights) < 0.05
