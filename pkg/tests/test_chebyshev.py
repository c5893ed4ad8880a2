import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import interpolate

from gsplab.chebyshev import (NodeSet, bspline_value, chebyshev_value, divided_difference, extrema,
                              hermite_genocchi_mc, min_norm_check, monic_chebyshev_coeffs,
                              random_positive_case, simplex_density_check, simplex_weights,
                              smoothing, smoothing_derivative, sup_abs, verify_continuous,
                              verify_discrete)
from gsplab.errors import ValidationError


@pytest.mark.parametrize("k", range(1, 11))
def test_extrema_alternate(k):
    nodes = extrema(k).nodes
    assert np.all(np.diff(nodes) > 0)
    assert np.array_equal(nodes, -nodes[::-1])
    assert np.allclose(chebyshev_value(k, nodes), (-1.0) ** (k - np.arange(k + 1)), atol=1e-12)


def test_chebyshev_value_matches_trig_form():
    x = np.linspace(-1, 1, 101)
    for k in range(8):
        assert np.allclose(chebyshev_value(k, x), np.cos(k * np.arccos(x)), atol=1e-12)
    with pytest.raises(ValidationError):
        chebyshev_value(3, 1.5)


def test_nodeset_shape():
    with pytest.raises(ValidationError):
        NodeSet(3, [0.0, 1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.lists(st.floats(-3, 3), min_size=7, max_size=7),
       st.lists(st.floats(-1, 1), min_size=7, max_size=7, unique=True))
def test_divided_difference_of_polynomial(k, coef, raw_nodes):
    nodes = np.array(raw_nodes[: k + 1])
    if np.min(np.diff(np.sort(nodes))) < 1e-2:
        return
    c = np.array(coef[: k + 1])
    table = divided_difference(nodes, np.polynomial.polynomial.polyval(nodes, c))
    assert table.leading == pytest.approx(c[-1], abs=1e-6 * (1 + np.abs(c).sum()))


def test_divided_difference_next_power_is_node_sum():
    nodes = np.array([-0.9, -0.2, 0.3, 0.8])
    assert divided_difference(nodes, nodes ** 4).leading == pytest.approx(nodes.sum(), abs=1e-12)
    with pytest.raises(ValidationError):
        divided_difference([0.0, 0.0], [1.0, 2.0])


@pytest.mark.parametrize("k", range(1, 11))
def test_monic_chebyshev_is_extremal(k):
    rep = min_norm_check(monic_chebyshev_coeffs(k))
    assert rep.passed and rep.max_abs_at_extrema == pytest.approx(2.0 ** (1 - k), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10), st.lists(st.floats(-5, 5), min_size=10, max_size=10), st.floats(0.1, 10))
def test_min_norm_random(k, coef, lead):
    c = np.append(np.array(coef[:k]), 1.0) * lead
    assert min_norm_check(c).passed


def test_simplex_weights():
    w = simplex_weights(np.random.default_rng(0), 50_000, 4)
    assert w.shape == (50_000, 5) and np.allclose(w.sum(axis=1), 1) and np.all(w >= 0)
    assert np.allclose(w.mean(axis=0), 0.2, atol=0.005)


def test_hermite_genocchi_constant_derivative_is_exact():
    k = 5
    res = hermite_genocchi_mc(lambda x: math.factorial(k) * np.ones_like(x), extrema(k), 4096, 0)
    assert res.estimate == pytest.approx(1.0, abs=1e-14)


def test_hermite_genocchi_thread_independent():
    fk = lambda x: np.exp(x)
    a = hermite_genocchi_mc(fk, extrema(3), 8192, 1, workers=1)
    b = hermite_genocchi_mc(fk, extrema(3), 8192, 1, workers=4)
    assert a == b
    exact = divided_difference(extrema(3), np.exp(extrema(3).nodes)).leading
    assert abs(a.estimate - exact) <= 4 * a.se


def test_simplex_density_k1_uniform():
    rep = simplex_density_check(1, n_mc=40_000, rng=0)
    assert np.all(np.abs(rep.density - 0.5) <= 4 * rep.se + 0.01)
    assert rep.positive and rep.empirical_L == pytest.approx(2.0, rel=0.05)


def test_sup_abs_refines_between_samples():
    val, _ = sup_abs(lambda x: np.sin(x), 0, 3, n=7)
    assert val == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 5])
def test_verify_continuous_monomial(k):
    N = 10.0
    rep = verify_continuous(lambda x: x ** k / math.factorial(k), lambda x: np.ones_like(x), k, N)
    assert rep.lhs == pytest.approx(0.9, rel=1e-10)
    assert rep.sup == pytest.approx(N ** k / math.factorial(k), rel=1e-10)
    assert rep.implied_c0 == pytest.approx((0.9 * math.factorial(k)) ** (1 / k) / k, rel=1e-9)


@pytest.mark.parametrize("k", [2, 4, 7])
def test_verify_continuous_scaled_chebyshev(k):
    N = 20.0
    coef = np.polynomial.chebyshev.Chebyshev.basis(k)
    dk = float(coef.deriv(k)(0.0))
    rep = verify_continuous(lambda x: coef(x / N), lambda x: np.full_like(x, dk / N ** k), k, N)
    assert dk == 2 ** (k - 1) * math.factorial(k)
    assert rep.implied_c0 == pytest.approx((0.9 * dk) ** (1 / k) / k, rel=1e-8)
    wide = verify_continuous(lambda x: coef(x / N), lambda x: np.full_like(x, dk / N ** k), k, N, "9/10")
    assert wide.implied_c0 == pytest.approx((1.8 * dk / math.factorial(k)) ** (1 / k), rel=1e-8)


def test_verify_continuous_validation():
    with pytest.raises(ValidationError):
        verify_continuous(lambda x: x, lambda x: np.cos(x), 1, 10)
    with pytest.raises(ValidationError):
        verify_continuous(lambda x: x, lambda x: np.ones_like(x), 1, 10, window="1/2")


def test_random_case_derivative_consistent():
    case = random_positive_case(np.random.default_rng(5), 3, 10.0)
    x = np.linspace(-9, 9, 7)
    h = 1e-2
    # third central difference approximates f'''
    d3 = (case.f(x + 2 * h) - 2 * case.f(x + h) + 2 * case.f(x - h) - case.f(x - 2 * h)) / (2 * h ** 3)
    assert np.allclose(d3, case.fk(x), rtol=1e-3, atol=1e-3 * np.abs(case.fk(x)).max())
    assert np.all(case.fk(np.linspace(-10, 10, 500)) > 0)


@pytest.mark.parametrize("k", range(0, 7))
def test_bspline_matches_scipy_basis(k):
    x = np.linspace(-(k + 1) / 2 - 0.5, (k + 1) / 2 + 0.5, 301)
    if k == 0:
        ref = ((x >= -0.5) & (x < 0.5)).astype(float)
    else:
        ref = interpolate.BSpline.basis_element(np.arange(k + 2) - (k + 1) / 2, extrapolate=False)(x)
    assert np.allclose(bspline_value(k, x), np.nan_to_num(ref), atol=1e-13)
    t = np.linspace(0, 1, 11)
    total = sum(bspline_value(k, t - n) for n in range(-k - 2, k + 3))
    assert np.allclose(total, 1.0, atol=1e-13)


def test_smoothing_derivative_matches_finite_difference():
    f = np.random.default_rng(0).normal(size=20)
    x = np.linspace(3, 15, 9)
    h = 1e-6
    num = (smoothing(f, 0, 3, x + h) - smoothing(f, 0, 3, x - h)) / (2 * h)
    assert np.allclose(smoothing_derivative(f, 0, 3, x), num, atol=1e-6)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_verify_discrete_monomial(k):
    N = 12
    n = np.arange(-2 * N, 2 * N + 1, dtype=float)
    # f(n) = n(n-1)...(n-k+1) / k! has Delta^k f = 1
    f = np.prod([n - j for j in range(k)], axis=0) / math.factorial(k)
    rep = verify_discrete(f, k, N)
    m = math.floor(0.9 * N)
    assert rep.min_delta_k == pytest.approx(1.0)
    assert rep.lhs == pytest.approx((2 * m + 1) / N)
    assert rep.sup == pytest.approx(np.abs(f).max())
    assert rep.implied_c == pytest.approx((N ** k * rep.lhs / (math.factorial(k) * rep.sup)) ** (1 / k))
    assert rep.smoothing_min == pytest.approx(1.0, abs=1e-12)


def test_verify_discrete_validation():
    with pytest.raises(ValidationError):
        verify_discrete(np.zeros(10), 1, 3)
    with pytest.raises(ValidationError):
        verify_discrete(-np.arange(13.0), 1, 3)
