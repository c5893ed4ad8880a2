import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from gsplab import catalog
from gsplab.errors import InapplicableError, ValidationError
from gsplab.gauss_tools import (anderson_check, antideriv_variance, borell_tis_check,
                                cyclic_shift_witness, dudley_sup_antiderivative,
                                dudley_sup_stationary, iid_average_bound_check, khatri_sidak_check,
                                large_ball_check, log_ball, log_normal_ccdf, normal_ccdf,
                                path_integral_variance_mc, tail_bounds_check, tails_comp_theta)
from gsplab.sampler import PathGrid
from gsplab.spectral import Domain


def test_normal_helpers_against_erfc():
    for x in (0.1, 1.0, 5.0):
        assert normal_ccdf(x) == pytest.approx(0.5 * math.erfc(x / math.sqrt(2)), rel=1e-14)
        assert math.exp(log_ball(x)) == pytest.approx(math.erf(x / math.sqrt(2)), rel=1e-13)
    # far tail stays finite in logs
    assert log_normal_ccdf(40.0) == pytest.approx(-800 - math.log(40 * math.sqrt(2 * math.pi)), abs=1e-3)
    assert log_ball(1e-8) == pytest.approx(math.log(1e-8 * math.sqrt(2 / math.pi)), rel=1e-9)


def test_tail_bounds_on_wide_grid():
    rep = tail_bounds_check(np.geomspace(1e-3, 30, 500))
    assert rep.passed and rep.margin >= 0
    with pytest.raises(ValidationError):
        tail_bounds_check([0.0, 1.0])


def test_tails_comp_theta_certified():
    theta, rep = tails_comp_theta(0.1)
    assert rep.passed and theta > 1
    theta_small, _ = tails_comp_theta(0.01)
    assert theta_small >= theta - 1e-6


def test_iid_average_equality_case_and_precondition():
    rep = iid_average_bound_check(np.full(7, 0.3), 0.3)
    assert rep.passed and abs(rep.margin) < 1e-14
    with pytest.raises(ValidationError):
        iid_average_bound_check([1.0, 2.0], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=1, max_size=30), st.floats(0, 2))
def test_iid_average_random(b, extra):
    assert iid_average_bound_check(b, float(np.mean(b)) + extra).passed


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=25), st.lists(st.integers(0, 100), min_size=1, max_size=8))
def test_cyclic_shift_witness(f, S):
    f = np.array(f)
    L = float(f.mean())
    tau = cyclic_shift_witness(f, S, L)
    idx = sorted(set(s % f.size for s in S))
    assert f[[(i + tau) % f.size for i in idx]].mean() <= L + 1e-9


def test_khatri_sidak_iid_is_equality():
    rep = khatri_sidak_check(np.eye(3), 0.7)
    assert rep.passed and abs(rep.margin) < 1e-9


def test_khatri_sidak_correlated_two_dim_closed_form():
    # for r = 1 the box collapses: P(|Z| <= ell) >= P(|Z| <= ell)^2
    r = 0.6
    rep = khatri_sidak_check(np.array([[1, r], [r, 1]]), 1.0)
    assert rep.passed and rep.margin > 0


def test_khatri_sidak_mc_dimension():
    gen = np.random.default_rng(3)
    a = gen.standard_normal((5, 7))
    rep = khatri_sidak_check(a @ a.T, 2.0, 20_000, 1)
    assert rep.passed and rep.se > 0


def test_anderson_zero_perturbation_is_equality():
    grid = PathGrid(Domain.INTEGER, 0, 1, 6)
    rep = anderson_check(catalog.uniform(), None, grid, 1.0, 4096, 0)
    assert rep.margin == 0.0 and rep.passed
    rep = anderson_check(catalog.uniform(), catalog.gap(), grid, 1.0, 8192, 0)
    assert rep.passed and rep.margin > 0


def test_borell_tis_and_dudley():
    rep = borell_tis_check(catalog.uniform(), 20, [0.5, 1.0, 2.0], 5000, 0)
    assert rep.passed
    sup = dudley_sup_stationary(catalog.uniform(Domain.CONTINUOUS), 20, 2000, 0)
    assert 0 < sup.implied_K < 10 and sup.grid_step <= math.sqrt(3) / (4 * math.pi)
    anti = dudley_sup_antiderivative(catalog.gap(Domain.CONTINUOUS), 0.5, 1.0, 10, 2000, 0)
    assert anti.empirical_E_sup > 0
    with pytest.raises(InapplicableError):
        dudley_sup_antiderivative(catalog.uniform(Domain.CONTINUOUS), 0.01, 1.0, 10, 100, 0)


def test_antideriv_variance_closed_forms():
    N = 5.0
    atom = antideriv_variance(catalog.atoms((1.0, 1.0)), N)
    assert atom.value == pytest.approx(2 * (1 - math.cos(N)), rel=1e-12)
    direct, _ = integrate.quad(lambda t: 2 * (N - t) * np.sinc(t), 0, N, limit=200, epsabs=1e-13)
    assert antideriv_variance(catalog.uniform(Domain.CONTINUOUS), N).value == pytest.approx(direct, rel=1e-9)
    with pytest.raises(ValidationError):
        antideriv_variance(catalog.uniform(), N)


def test_path_integral_mc_matches_variance():
    rho = catalog.gap(Domain.CONTINUOUS)
    var, se = path_integral_variance_mc(rho, 4.0, 1 / 32, 20_000, 0)
    assert abs(var - antideriv_variance(rho, 4.0).value) <= 3 * se + 1e-3


def test_large_ball_threshold():
    rho = catalog.gap(Domain.CONTINUOUS)
    rep = large_ball_check(rho, 2.0, [0.5, 2.0, 4.0], 2.0, 4096, 0)
    assert rep.details["levels"][-1]["holds"]
    with pytest.raises(ValidationError):
        large_ball_check(rho, 0.5, [1.0], 2.0)
