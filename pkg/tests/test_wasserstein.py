import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from watl.errors import InvalidArgument
from watl.oracles import projection_by_enumeration
from watl.wasserstein import (
    GridFunction,
    QuantileGrid,
    empirical_quantile_values,
    frechet_mean,
    l2_distance,
    make_grid,
    pava,
    project_to_quantile,
    project_values,
    quantile_from_samples,
    wasserstein_distance,
)


def qg(grid, values, **kw):
    return QuantileGrid(grid, np.asarray(values, dtype=float), **kw)


# grid -----------------------------------------------------------------------

def test_make_grid_small():
    g = make_grid(2)
    np.testing.assert_array_equal(g.nodes, [0.25, 0.75])
    np.testing.assert_array_equal(g.weights, [0.5, 0.5])
    np.testing.assert_array_equal(make_grid(4).nodes, [0.125, 0.375, 0.625, 0.875])


@pytest.mark.parametrize("M", [1, 0, -3, 2.5])
def test_make_grid_rejects_bad_size(M):
    with pytest.raises(InvalidArgument):
        make_grid(M)


def test_grid_equality_and_immutability():
    a, b = make_grid(10), make_grid(10)
    assert a == b and a != make_grid(11)
    with pytest.raises(ValueError):
        a.nodes[0] = 0.3


# distances ------------------------------------------------------------------

def test_l2_distance_trivial():
    g = make_grid(37)
    f = GridFunction(g, np.sin(g.nodes))
    assert l2_distance(f, f) == 0.0
    assert l2_distance(GridFunction(g, np.zeros(37)), GridFunction(g, np.ones(37))) == pytest.approx(1.0, abs=1e-14)


def test_l2_distance_linear_quadrature_convergence():
    # ||u - 2u|| = sqrt(int u^2) = 1/sqrt(3); midpoint error is O(M^-2)
    exact = 1 / math.sqrt(3)
    errs = []
    for M in (100, 1000, 10000):
        g = make_grid(M)
        errs.append(abs(l2_distance(GridFunction(g, g.nodes), GridFunction(g, 2 * g.nodes)) - exact))
    assert errs[1] < 1e-3
    assert errs[0] > errs[1] > errs[2]
    assert errs[0] / errs[1] > 50


def test_wasserstein_point_masses_and_translation():
    g = make_grid(50)
    assert wasserstein_distance(qg(g, np.full(50, 2.0)), qg(g, np.full(50, -1.5))) == pytest.approx(3.5)
    q = qg(g, np.sort(np.random.default_rng(0).normal(size=50)))
    assert wasserstein_distance(q, qg(g, q.values + 0.7)) == pytest.approx(0.7, abs=1e-12)


def test_wasserstein_uniforms():
    g = make_grid(1000)
    d = wasserstein_distance(qg(g, g.nodes), qg(g, 2 * g.nodes))
    assert d == pytest.approx(1 / math.sqrt(3), abs=1e-3)


def test_wasserstein_grid_mismatch():
    with pytest.raises(InvalidArgument):
        wasserstein_distance(qg(make_grid(3), [0, 1, 2]), qg(make_grid(4), [0, 1, 2, 3]))


def test_quantile_grid_rejects_decreasing_and_out_of_bounds():
    g = make_grid(3)
    with pytest.raises(InvalidArgument):
        qg(g, [0, 2, 1])
    with pytest.raises(InvalidArgument):
        qg(g, [0, 1, 2], lo=0.5)


# Frechet mean ---------------------------------------------------------------

def test_frechet_mean_basic_cases():
    g = make_grid(5)
    q = qg(g, [0, 1, 2, 3, 4])
    np.testing.assert_array_equal(frechet_mean([q]).values, q.values)
    m = frechet_mean([qg(g, np.full(5, 1.0)), qg(g, np.full(5, 4.0))], [1, 1])
    np.testing.assert_allclose(m.values, 2.5)


def test_frechet_mean_translated_copies_matches_direct_sum():
    g = make_grid(8)
    base = np.sort(np.random.default_rng(1).normal(size=8))
    cs = [0.3, -1.2, 2.0, 0.05]
    qs = [qg(g, base + c) for c in cs]
    direct = np.zeros(8)
    for q in qs:
        for j in range(8):
            direct[j] += q.values[j] / len(qs)
    np.testing.assert_allclose(frechet_mean(qs).values, base + np.mean(cs), atol=1e-14)
    np.testing.assert_allclose(frechet_mean(qs).values, direct, atol=1e-14)


def test_frechet_mean_rejects_empty_and_zero_weights():
    g = make_grid(3)
    with pytest.raises(InvalidArgument):
        frechet_mean([])
    with pytest.raises(InvalidArgument):
        frechet_mean([qg(g, [0, 1, 2])], [0.0])


# projection -----------------------------------------------------------------

def test_projection_examples():
    g = make_grid(3)
    np.testing.assert_allclose(project_to_quantile(GridFunction(g, [3.0, 1.0, 2.0])).values, [2, 2, 2])
    dec = np.array([5.0, 3.0, 1.0])
    np.testing.assert_allclose(project_to_quantile(GridFunction(g, dec)).values, np.full(3, dec.mean()))
    mono = GridFunction(g, [0.1, 0.2, 0.9])
    np.testing.assert_array_equal(project_to_quantile(mono, 0.0, 1.0).values, mono.values)


def test_projection_examples_agree_with_brute_force():
    w = np.full(3, 1 / 3)
    np.testing.assert_allclose(projection_by_enumeration([3, 1, 2], w), [2, 2, 2], atol=1e-14)
    np.testing.assert_allclose(projection_by_enumeration([5, 3, 1], w), [3, 3, 3], atol=1e-14)


def test_pava_weighted():
    # pooling 2 and 0 with weights 3 and 1 gives 1.5
    np.testing.assert_allclose(pava(np.array([2.0, 0.0, 4.0]), np.array([3.0, 1.0, 1.0])), [1.5, 1.5, 4.0])


def test_projection_rows_of_matrix():
    g = make_grid(4)
    Y = np.array([[4.0, 3, 2, 1], [0, 1, 2, 3]])
    P = project_values(Y, g.weights)
    np.testing.assert_allclose(P[0], 2.5)
    np.testing.assert_array_equal(P[1], Y[1])


finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.integers(2, 9), elements=finite), st.data())
def test_projection_matches_brute_force(y, data):
    M = y.size
    w = np.array(data.draw(st.lists(st.floats(0.05, 3), min_size=M, max_size=M)))
    w = w / w.sum()
    bounds = data.draw(st.sampled_from(["none", "both"]))
    lo, hi = (-math.inf, math.inf) if bounds == "none" else sorted(data.draw(st.tuples(finite, finite)))
    fast = project_values(y, w, lo, hi)
    slow = projection_by_enumeration(y, w, lo, hi)
    np.testing.assert_allclose(fast, slow, atol=1e-8)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=finite))
def test_projection_properties(y):
    g = make_grid(y.size)
    p = project_values(y, g.weights, -10.0, 10.0)
    assert np.all(np.diff(p) >= 0)
    assert p.min() >= -10 and p.max() <= 10
    np.testing.assert_array_equal(project_values(p, g.weights, -10.0, 10.0), p)
    # projection onto a convex set is nonexpansive
    z = np.sort(np.clip(y[::-1], -10, 10))
    assert math.sqrt(g.weights @ (p - z) ** 2) <= math.sqrt(g.weights @ (y - z) ** 2) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31 - 1))
def test_wasserstein_metric_axioms(M, seed):
    rng = np.random.default_rng(seed)
    g = make_grid(M)
    a, b, c = (qg(g, np.sort(rng.normal(size=M))) for _ in range(3))
    assert wasserstein_distance(a, b) == pytest.approx(wasserstein_distance(b, a))
    assert wasserstein_distance(a, c) <= wasserstein_distance(a, b) + wasserstein_distance(b, c) + 1e-12


# empirical quantiles --------------------------------------------------------

def test_empirical_quantile_examples():
    g = make_grid(7)
    np.testing.assert_array_equal(quantile_from_samples([5.0], g).values, np.full(7, 5.0))
    np.testing.assert_array_equal(empirical_quantile_values(np.array([2.0, 1.0]), np.array([0.25, 0.75])), [1, 2])


def test_empirical_quantile_left_continuous_at_atom_boundary():
    # F^-1(0.5) of {1, 2} is 1 (left-continuous inverse)
    assert empirical_quantile_values(np.array([1.0, 2.0]), np.array([0.5]))[0] == 1.0


def test_empirical_quantile_normal_convergence():
    from scipy.special import ndtri
    g = make_grid(500)
    exact = qg(g, ndtri(g.nodes))
    for seed in range(10):
        ys = np.random.default_rng(seed).normal(size=100_000)
        assert wasserstein_distance(quantile_from_samples(ys, g), exact) < 0.02


def test_quantile_from_samples_rejects_empty_and_nonfinite():
    g = make_grid(4)
    with pytest.raises(InvalidArgument):
        quantile_from_samples([], g)
    with pytest.raises(InvalidArgument):
        quantile_from_samples([1.0, math.nan], g)
