"""Acceptance criteria, one PASS/FAIL line each (see the terminal summary)."""
import io
import math
import sys
import time

import numpy as np
import pytest
import yaml

from gsplab import catalog
from gsplab.bounds import k_of_N, optimize_lower, slope_fit
from gsplab.chebyshev import (divided_difference, extrema, hermite_genocchi_mc, min_norm_check,
                              monic_chebyshev_coeffs, random_positive_case, verify_continuous)
from gsplab.cli import run
from gsplab.gauss_tools import (antideriv_variance, iid_average_bound_check, khatri_sidak_check,
                                path_integral_variance_mc, tail_bounds_check)
from gsplab.orthant import exact_orthant_small, genz_orthant
from gsplab.persistence import CurveParams, persistence_curve, persistence_integer
from gsplab.spectral import Domain, half_line_mass, moment

CURVE_N = range(8, 65)
SAMPLES = 100_000
# a float64 result that is exact up to rounding has se 0; allow a few ulp
ULP_FLOOR = 64 * np.finfo(float).eps


def random_correlation(gen, d):
    a = gen.standard_normal((d, d + 1))
    cov = a @ a.T
    s = np.sqrt(np.diag(cov))
    return cov / np.outer(s, s)


@pytest.fixture(scope="module")
def iid_curve():
    return persistence_curve(catalog.uniform(), CURVE_N, "orthant", CurveParams(SAMPLES), rng=1)


@pytest.fixture(scope="module")
def power_curve():
    return persistence_curve(catalog.power(-0.5), CURVE_N, "orthant", CurveParams(SAMPLES), rng=1)


def test_criterion_01_iid_orthant(acceptance):
    start = time.perf_counter()
    est = persistence_integer(catalog.uniform(), 10, SAMPLES, rng=0, method="orthant")
    elapsed = time.perf_counter() - start
    exact = 2.0 ** -10
    err = abs(est.p - exact)
    allowed = max(3 * est.se_p, ULP_FLOOR * exact)
    ok = err <= allowed and err / exact <= 0.02 and elapsed <= 10
    acceptance(1, ok, f"p={est.p:.12g} |err|={err:.3g} allowed={allowed:.3g} "
                      f"rel={err / exact:.2g} time={elapsed:.2f}s")


def test_criterion_02_small_orthants(acceptance):
    gen = np.random.default_rng(2024)
    worst_exact, worst_z, n = 0.0, 0.0, 0
    for d in (2, 3):
        for i in range(100):
            corr = random_correlation(gen, d)
            if d == 2:
                formula = 0.25 + math.asin(corr[0, 1]) / (2 * math.pi)
            else:
                formula = 0.125 + (math.asin(corr[0, 1]) + math.asin(corr[0, 2])
                                   + math.asin(corr[1, 2])) / (4 * math.pi)
            exact = exact_orthant_small(corr).p
            worst_exact = max(worst_exact, abs(exact - formula))
            mc = genz_orthant(corr, SAMPLES, rng=i)
            dev = abs(mc.p - formula)
            worst_z = max(worst_z, dev / max(mc.se_p, ULP_FLOOR * formula))
            n += 1
    ok = worst_exact <= 1e-6 and worst_z <= 3
    acceptance(2, ok, f"{n} matrices: max|exact-formula|={worst_exact:.2g}, "
                      f"max |genz-formula|/se={worst_z:.2f}")


def test_criterion_03_lower_bound_holds(acceptance):
    start = time.perf_counter()
    measures = {"iid": catalog.uniform(), "power(-1/2)": catalog.power(-0.5),
                "power(1)": catalog.power(1.0), "mix": catalog.atoms_plus_density()}
    failures, worst = [], -math.inf
    for name, rho in measures.items():
        for N in (4, 8, 16, 32):
            est = persistence_integer(rho, N, SAMPLES, rng=3)
            lower = optimize_lower(rho, N).log_bound
            slack = lower - (est.log_p + 3 * est.se_log)
            worst = max(worst, slack)
            if slack > 0:
                failures.append(f"{name} N={N}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed <= 300
    acceptance(3, ok, f"max(lower - (log p + 3se))={worst:.3g} time={elapsed:.1f}s failures={failures}")


def test_criterion_04_iid_slope(acceptance, iid_curve):
    fit = slope_fit(iid_curve, "PowerOfN", rng=4)
    ok = 0.9 <= fit.exponent <= 1.1
    acceptance(4, ok, f"exponent={fit.exponent:.4f} ci=({fit.ci[0]:.4f}, {fit.ci[1]:.4f}) "
                      f"points={fit.n_points}")


def test_criterion_05_power_slope_and_lower(acceptance, power_curve):
    rho = catalog.power(-0.5)
    fit = slope_fit(power_curve, "PowerOfN", rng=5)
    violations = [pt.N for pt in power_curve
                  if optimize_lower(rho, pt.N).log_bound > pt.estimate.log_p + 3 * pt.estimate.se_log]
    ok = 0.40 <= fit.exponent <= 0.80 and not violations
    acceptance(5, ok, f"exponent={fit.exponent:.4f} ci=({fit.ci[0]:.4f}, {fit.ci[1]:.4f}) "
                      f"lower-bound violations={violations}")


def test_criterion_06_gap_superlinear(acceptance):
    pts = persistence_curve(catalog.gap(), range(6, 19), "orthant", CurveParams(SAMPLES), rng=6)
    L = {pt.N: -pt.estimate.log_p for pt in pts
         if pt.estimate is not None and pt.estimate.se_log <= 0.1 * -pt.estimate.log_p}
    Ns = sorted(L)
    per_n = [L[n] / n for n in Ns]
    increasing = all(b > a for a, b in zip(per_n, per_n[1:]))
    ratio = (L[18] / 18) / (L[6] / 6) if 6 in L and 18 in L else math.nan
    ok = increasing and ratio >= 1.5 and len(Ns) == 13
    acceptance(6, ok, f"N used={Ns[0]}..{Ns[-1]} ({len(Ns)}) strictly increasing={increasing} "
                      f"(L(18)/18)/(L(6)/6)={ratio:.3f}")


def test_criterion_07_k_of_N(acceptance):
    gap_ok = all(k_of_N(catalog.gap(), N) == math.floor(N) for N in range(2, 21))
    uni_ok = all(k_of_N(catalog.uniform(), N) == 0 for N in range(1, 101))
    acceptance(7, gap_ok and uni_ok, f"gap k(N)=N on 2..20: {gap_ok}; uniform k(N)=0 on 1..100: {uni_ok}")


def test_criterion_08_continuous_inequality(acceptance):
    gen = np.random.default_rng(8)
    worst, fails = 0.0, 0
    for i in range(1000):
        k = 1 + i % 8
        N = (10.0, 100.0)[(i // 8) % 2]
        case = random_positive_case(gen, k, N)
        rep = verify_continuous(case.f, case.fk, k, N)
        worst = max(worst, rep.implied_c0)
        fails += not rep.holds_at(2.0)
    cheb = []
    for k in range(2, 11):
        poly = np.polynomial.chebyshev.Chebyshev.basis(k)
        dk = float(poly.deriv(k)(0.0))
        N = 20.0
        rep = verify_continuous(lambda x, p=poly: p(x / N), lambda x, c=dk / N ** k: np.full_like(x, c), k, N)
        cheb.append(rep.implied_c0)
    cheb_ok = all(0.6 <= c <= 1.1 for c in cheb)
    ok = fails == 0 and cheb_ok
    acceptance(8, ok, f"1000 random: failures at c0=2: {fails}, max implied c0={worst:.3f}; "
                      f"scaled Chebyshev implied c0 in [{min(cheb):.3f}, {max(cheb):.3f}]")


def test_criterion_09_hermite_genocchi(acceptance):
    gen = np.random.default_rng(9)
    worst, n = 0.0, 0
    for k in range(1, 7):
        nodes = extrema(k)
        for j in range(20):
            poly = np.polynomial.Polynomial(gen.normal(size=k + 4))
            exact = divided_difference(nodes, poly(nodes.nodes)).leading
            mc = hermite_genocchi_mc(poly.deriv(k), nodes, SAMPLES, rng=100 * k + j)
            z = abs(mc.estimate - exact) / max(mc.se, ULP_FLOOR * max(abs(exact), 1.0))
            worst = max(worst, z)
            n += 1
    acceptance(9, worst <= 3, f"{n} polynomials, max |MC - divided difference|/se={worst:.2f}")


def test_criterion_10_min_norm(acceptance):
    gen = np.random.default_rng(10)
    worst, fails = math.inf, 0
    for k in range(1, 11):
        for _ in range(10_000):
            coef = np.append(gen.normal(scale=gen.uniform(0.01, 3.0), size=k), 1.0)
            rep = min_norm_check(coef)
            worst = min(worst, rep.max_abs_at_extrema / rep.threshold)
            fails += not rep.passed
    eq = [abs(min_norm_check(monic_chebyshev_coeffs(k)).max_abs_at_extrema - 2.0 ** (1 - k)) for k in range(1, 11)]
    ok = fails == 0 and max(eq) <= 1e-12
    acceptance(10, ok, f"1e5 polynomials: failures={fails}, min max|P|/2^(1-k)={worst:.4f}; "
                       f"Chebyshev equality error={max(eq):.2g}")


def test_criterion_11_gaussian_toolkit(acceptance):
    gen = np.random.default_rng(11)
    tail = tail_bounds_check(np.geomspace(1e-3, 30, 1000))
    ks_fail = 0
    for i in range(500):
        d = 1 + i % 5
        corr = random_correlation(gen, d)
        ks_fail += not khatri_sidak_check(corr, float(gen.uniform(0.2, 3.0)), 20_000, rng=i).passed
    iid_fail = 0
    for _ in range(1000):
        b = gen.normal(size=int(gen.integers(1, 40)))
        iid_fail += not iid_average_bound_check(b, float(b.mean() + gen.exponential())).passed
    suite = [("uniform", catalog.uniform(Domain.CONTINUOUS), 0.5),
             ("power(-1/2)", catalog.power(-0.5, Domain.CONTINUOUS), 0.25),
             ("gap", catalog.gap(Domain.CONTINUOUS), 1.5),
             ("expwell(1)", catalog.expwell(1.0), 1.5)]
    var_msgs, var_ok = [], True
    for i, (name, rho, gamma) in enumerate(suite):
        # rho([0, lam]) <= lam^gamma int_0^lam x^-gamma d rho <= lam^gamma m_{-gamma} / 2
        b = 0.5 * moment(rho, -gamma)
        lam = np.geomspace(1e-4, 10, 200)
        assert all(half_line_mass(rho, float(x)) <= b * x ** gamma * (1 + 1e-9) for x in lam)
        exact = antideriv_variance(rho, 4.0, b, gamma)
        mc, se = path_integral_variance_mc(rho, 4.0, 1 / 16, 20_000, rng=50 + i)
        z = abs(mc - exact.value) / se
        var_ok &= z <= 3 and exact.bound_holds
        var_msgs.append(f"{name} z={z:.2f}")
    ok = tail.passed and ks_fail == 0 and iid_fail == 0 and var_ok
    acceptance(11, ok, f"tail margin={tail.margin:.3g}; khatri-sidak failures={ks_fail}/500; "
                       f"iid-average failures={iid_fail}/1000; variance {', '.join(var_msgs)}")


CLI_CASES = [
    ("estimate", {"measure": {"catalog": "power", "args": {"alpha": -0.5}},
                  "params": {"N": 24, "method": "orthant", "n_samples": 20_000}}),
    ("curve", {"measure": {"catalog": "uniform"},
               "params": {"N_list": [8, 12, 16], "method": "orthant", "n_samples": 8192}}),
    ("sample", {"measure": {"catalog": "gap"}, "params": {"N": 32, "n_paths": 64, "method": "circulant"}}),
    ("cheby", {"params": {"family": "random", "k_list": [2, 3], "N": 10, "n_functions": 3}}),
    ("verify", {"params": {"checks": ["hermite_genocchi", "khatri_sidak"],
                           "hermite_genocchi": {"k_max": 3, "n_mc": 8192},
                           "khatri_sidak": {"n_matrices": 6, "n_samples": 4096}}}),
]


def test_criterion_12_cli_reproducible(acceptance, tmp_path):
    mismatches = []
    for command, cfg in CLI_CASES:
        path = tmp_path / f"{command}.yaml"
        path.write_text(yaml.safe_dump(cfg))
        outputs = []
        for threads in ("1", "4", "1"):
            out = io.StringIO()
            code = run([command, "--config", str(path), "--seed", "12345", "--threads", threads], out, sys.stderr)
            outputs.append((code, out.getvalue().encode()))
        if len(set(outputs)) != 1 or outputs[0][0] != 0:
            mismatches.append(command)
    acceptance(12, not mismatches, f"{len(CLI_CASES)} commands x threads 1/4/1, mismatches={mismatches}")
