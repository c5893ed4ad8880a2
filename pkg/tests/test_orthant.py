import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gsplab.errors import ValidationError
from gsplab.orthant import box_probability_mc, exact_orthant_small, genz_orthant, orthant_probability


def equicorrelated(d, r):
    return np.full((d, d), r) + (1 - r) * np.eye(d)


def random_correlation(gen, d):
    a = gen.standard_normal((d, d + 2))
    cov = a @ a.T
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


@pytest.mark.parametrize("d", range(1, 8))
def test_iid_and_half_equicorrelation(d):
    assert orthant_probability(np.eye(d))[0] == pytest.approx(2.0 ** -d, abs=1e-10)
    # exchangeable correlation 1/2 gives P(max of d+1 iid is the last) = 1/(d+1)
    assert orthant_probability(equicorrelated(d, 0.5))[0] == pytest.approx(1 / (d + 1), abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(-0.999, 0.999))
def test_dim_two_arcsine(r):
    p = exact_orthant_small([[1, r], [r, 1]]).p
    assert p == pytest.approx(0.25 + math.asin(r) / (2 * math.pi), abs=1e-10)


def test_scale_invariance_and_validation():
    cov = np.array([[4.0, 1.0], [1.0, 9.0]])
    assert orthant_probability(cov)[0] == pytest.approx(0.25 + math.asin(1 / 6) / (2 * math.pi), abs=1e-12)
    with pytest.raises(ValidationError):
        orthant_probability(np.eye(8))
    with pytest.raises(ValidationError):
        orthant_probability([[1, 0.5], [0.4, 1]])


@pytest.mark.parametrize("d", [4, 5, 6, 7])
def test_exact_small_matches_plain_monte_carlo(d):
    gen = np.random.default_rng(d)
    cov = random_correlation(gen, d)
    n = 400_000
    x = gen.multivariate_normal(np.zeros(d), cov, size=n)
    p_mc = np.mean(np.all(x > 0, axis=1))
    se = math.sqrt(p_mc * (1 - p_mc) / n)
    assert abs(orthant_probability(cov)[0] - p_mc) <= 4 * se


def test_genz_equicorrelated_high_dim():
    for d, r in [(20, 0.5), (12, 0.0)]:
        est = genz_orthant(equicorrelated(d, r), 20_000, 1)
        expected = -math.log(d + 1) if r else -d * math.log(2)
        assert abs(est.log_p - expected) <= max(4 * est.se_log, 1e-9)
        assert est.method == "OrthantMC"


def test_genz_reproducible_and_thread_independent():
    cov = random_correlation(np.random.default_rng(0), 10)
    a = genz_orthant(cov, 4096, 3, workers=1)
    b = genz_orthant(cov, 4096, 3, workers=4)
    assert (a.log_p, a.se_log) == (b.log_p, b.se_log)
    assert genz_orthant(cov, 4096, 4).log_p != a.log_p


def test_box_probability_two_sided():
    # P(-1 < Z < 1)^3 for iid coordinates
    log_p, se = box_probability_mc(np.eye(3), -np.ones(3), np.ones(3), 4096, 0)
    assert log_p == pytest.approx(3 * math.log(math.erf(1 / math.sqrt(2))), abs=1e-9 + 3 * se)


def test_genz_rejects_tiny_budget():
    with pytest.raises(ValidationError):
        genz_orthant(np.eye(3), 8)
