"""Numerical checks of the Gaussian inequalities behind the persistence bounds.

Deterministic checks pass when their worst slack is at least -1e-12; Monte
Carlo checks pass when the slack is at least -3 standard errors.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, linalg, special

from .errors import InapplicableError, ValidationError
from .orthant import box_probability_mc
from .rng import as_rng
from .sampler import PathGrid, circulant_paths, cov_matrix
from .spectral import (INF, Domain, SpectralMeasure, half_line_mass, moment, total_mass)

DET_TOL = 1e-12
SQRT2 = math.sqrt(2.0)


@dataclass
class CheckReport:
    name: str
    grid_or_samples: str
    margin: float
    passed: bool
    se: float | None = None
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"name": self.name, "grid_or_samples": self.grid_or_samples, "margin": self.margin,
                "pass": self.passed, "se": self.se, "details": self.details}


def _det_report(name, desc, margin, **details):
    return CheckReport(name, desc, float(margin), bool(margin >= -DET_TOL), None, details)


def _mc_report(name, desc, margin, se, **details):
    return CheckReport(name, desc, float(margin), bool(margin >= -3 * se), float(se), details)


# ---------------------------------------------------------------- scalar normal functions

def normal_cdf(x):
    return special.ndtr(x)


def normal_ccdf(x):
    return special.ndtr(-np.asarray(x, dtype=float))


def log_normal_cdf(x):
    return special.log_ndtr(x)


def log_normal_ccdf(x):
    return special.log_ndtr(-np.asarray(x, dtype=float))


def log_ball(x):
    """log P(|Z| <= x) for x >= 0, accurate for tiny and for huge x."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        small = np.log(special.erf(x / SQRT2))
        large = np.log1p(-special.erfc(x / SQRT2))
    return np.where(x < 1.0, small, large)


# ---------------------------------------------------------------- one-dimensional estimates

def _rel_slack(lo, val, up):
    """min((val - lo)/val, (up - val)/val) for positive val."""
    return np.minimum((val - lo) / val, (up - val) / val)


def tail_bounds_check(x_grid) -> CheckReport:
    """The Mills-type tail sandwich and the small-ball sandwich for a standard normal."""
    x = np.asarray(x_grid, dtype=float)
    if x.size == 0 or np.any(~(x > 0)):
        raise ValidationError("grid must consist of positive reals")
    tail = normal_ccdf(x)
    gauss = np.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    slack_a = _rel_slack((1 / x - 1 / x**3) * gauss, tail, gauss / x)
    big = x >= 2
    slack_a2 = np.where(big, _rel_slack(np.exp(-x * x), tail, np.exp(-x * x / 2)), np.inf)
    ball = special.erf(x / SQRT2)
    slack_b = _rel_slack(math.sqrt(2 / math.pi) * x * np.exp(-x * x / 2), ball, x)
    small = x <= 1
    slack_b2 = np.where(small, _rel_slack(x / 4, ball, x), np.inf)
    parts = {"tail": float(slack_a.min()), "tail_x_ge_2": float(slack_a2.min()),
             "ball": float(slack_b.min()), "ball_x_le_1": float(slack_b2.min())}
    margin = min(parts.values())
    return _det_report("tail_bounds", f"{x.size} points in [{x.min():g}, {x.max():g}]", margin,
                       **parts)


def _theta_holds(theta, x):
    # P(Z > x) >= P(|Z| > theta x), in logs
    return np.all(log_normal_ccdf(x) >= math.log(2) + log_normal_ccdf(theta * x) - 1e-15)


def tails_comp_theta(delta: float, n_grid: int = 2000, x_max: float = 50.0, tol: float = 1e-6):
    """Smallest theta (to ``tol``) with P(Z <= x) <= P(|Z| <= theta x) on a log grid of [delta, x_max].

    Returns (theta, report) where the report re-checks theta on a ten times finer grid.
    """
    if not delta > 0:
        raise ValidationError("delta must be positive")
    x = np.geomspace(delta, max(x_max, 2 * delta), n_grid)
    lo, hi = 1.0, 2.0
    while not _theta_holds(hi, x):
        hi *= 2
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _theta_holds(mid, x):
            hi = mid
        else:
            lo = mid
    fine = np.geomspace(delta, max(x_max, 2 * delta), 10 * n_grid)
    slack = log_normal_ccdf(fine) - (math.log(2) + log_normal_ccdf(hi * fine))
    report = _det_report("tails_comp", f"{fine.size} log-spaced points in [{delta:g}, {fine[-1]:g}]",
                         float(slack.min()), theta=hi)
    return hi, report


def iid_average_bound_check(b_vector, q: float, n_samples: int | None = None, rng=None) -> CheckReport:
    """prod P(Z + b_j >= 0) <= P(Z <= q)^N whenever mean(b) <= q; evaluated exactly in logs."""
    b = np.asarray(b_vector, dtype=float)
    if b.size == 0:
        raise ValidationError("b_vector is empty")
    if np.mean(b) > q + 1e-12 * max(1.0, abs(q)):
        raise ValidationError(f"precondition violated: mean(b) = {np.mean(b)!r} > q = {q!r}")
    lhs = float(np.sum(log_normal_cdf(b)))
    rhs = float(b.size * log_normal_cdf(q))
    # relative slack in log space keeps tiny probabilities comparable
    margin = (rhs - lhs) / max(1.0, abs(rhs))
    return _det_report("iid_average", f"N={b.size}", margin, log_lhs=lhs, log_rhs=rhs)


def cyclic_shift_witness(f_values, S, L: float) -> int:
    """A shift tau with mean over S of f(n + tau) <= L, given mean(f) <= L."""
    f = np.asarray(f_values, dtype=float)
    n = f.size
    idx = np.asarray(sorted(set(int(s) % n for s in S)))
    if n == 0 or idx.size == 0:
        raise ValidationError("need nonempty f and S")
    tol = 1e-12 * max(1.0, float(np.max(np.abs(f))))
    if f.mean() > L + tol:
        raise ValidationError(f"precondition violated: mean(f) = {f.mean()!r} > L = {L!r}")
    means = np.array([f[(idx + tau) % n].mean() for tau in range(n)])
    ok = np.flatnonzero(means <= L + tol)
    if ok.size == 0:
        raise ValidationError("no witness found (floating point slack exceeded)")
    return int(ok[0])


# ---------------------------------------------------------------- ball probabilities

def _rect_prob(cov, lo, hi):
    """P(lo < X < hi) for dim <= 3 by nested adaptive quadrature over the first coordinate."""
    d = cov.shape[0]
    s0 = math.sqrt(cov[0, 0])
    if d == 1:
        return float(special.ndtr(hi[0] / s0) - special.ndtr(lo[0] / s0))
    beta = cov[1:, 0] / cov[0, 0]
    cond = cov[1:, 1:] - np.outer(cov[1:, 0], cov[0, 1:]) / cov[0, 0]

    def inner(x):
        return math.exp(-0.5 * (x / s0) ** 2) / (s0 * math.sqrt(2 * math.pi)) * \
            _rect_prob(cond, lo[1:] - beta * x, hi[1:] - beta * x)

    val, _ = integrate.quad(inner, lo[0], hi[0], epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(val)


def khatri_sidak_check(sigma, ell: float, n_samples: int = 100_000, rng=None) -> CheckReport:
    """P(|Z_j| <= ell for all j) >= prod_j P(|Z_j| <= ell)."""
    sigma = np.asarray(sigma, dtype=float)
    d = sigma.shape[0]
    if d > 8:
        raise ValidationError("khatri_sidak_check supports dimension <= 8")
    if np.linalg.eigvalsh(sigma)[0] <= 0:
        raise ValidationError("covariance must be positive definite")
    sd = np.sqrt(np.diag(sigma))
    log_rhs = float(np.sum(log_ball(ell / sd)))
    if d <= 3:
        lhs = _rect_prob(sigma, np.full(d, -ell), np.full(d, ell))
        margin = (lhs - math.exp(log_rhs)) / math.exp(log_rhs)
        return _det_report("khatri_sidak", f"dim {d}, quadrature", margin, lhs=lhs,
                           rhs=math.exp(log_rhs))
    log_lhs, se = box_probability_mc(sigma, np.full(d, -ell), np.full(d, ell), n_samples, rng,
                                     "khatri-sidak")
    margin = math.expm1(log_lhs - log_rhs)
    return _mc_report("khatri_sidak", f"dim {d}, {n_samples} samples", margin,
                      se * math.exp(log_lhs - log_rhs), lhs=math.exp(log_lhs), rhs=math.exp(log_rhs))


def anderson_check(rho_x: SpectralMeasure, rho_y: SpectralMeasure | None, grid: PathGrid,
                   ell: float, n_samples: int = 100_000, rng=None) -> CheckReport:
    """P(sup |X + Y| <= ell) <= P(sup |X| <= ell) on a grid of at most 64 points.

    ``rho_y=None`` stands for Y = 0. Both sides share the random stream, so the
    comparison uses common random numbers.
    """
    if grid.count > 64:
        raise ValidationError("anderson_check supports grids of at most 64 points")
    cx = cov_matrix(rho_x, grid)
    csum = cx if rho_y is None else cx + cov_matrix(rho_y, grid)
    box = (np.full(grid.count, -ell), np.full(grid.count, ell))
    lx, sx = box_probability_mc(cx, *box, n_samples, rng, "anderson")
    ls, ss = box_probability_mc(csum, *box, n_samples, rng, "anderson")
    px, ps = math.exp(lx), math.exp(ls)
    margin = (px - ps) / px
    se = math.hypot(sx, ss * ps / px)
    return _mc_report("anderson", f"{grid.count} grid points, {n_samples} samples", margin, se,
                      p_x=px, p_sum=ps)


# ---------------------------------------------------------------- suprema

def _paths(rho, grid, n_samples, rng, workers=1):
    return circulant_paths(rho, grid, n_samples, rng, workers).paths


def _default_grid(rho: SpectralMeasure, N: float, step: float | None) -> PathGrid:
    if rho.domain is Domain.INTEGER:
        return PathGrid(Domain.INTEGER, 0, 1, int(N) + 1)
    if step is None:
        raise ValidationError("continuous-time checks need a grid step")
    n = max(1, math.ceil(N / step - 1e-9))
    return PathGrid(Domain.CONTINUOUS, 0.0, N / n, n + 1)


def borell_tis_check(rho: SpectralMeasure, N: float, u_grid, n_samples: int = 100_000, rng=None,
                     step: float | None = None) -> CheckReport:
    """P(sup X - E sup X > u) <= exp(-u^2 / (2 sigma_I)) on the grid restriction of [0, N]."""
    grid = _default_grid(rho, N, step)
    if grid.count > 256:
        raise ValidationError("borell_tis_check supports grids of at most 256 points")
    sup = _paths(rho, grid, n_samples, rng).max(axis=1)
    mean = float(sup.mean())
    sigma_i = float(total_mass(rho))
    u = np.asarray(u_grid, dtype=float)
    freq = np.array([np.mean(sup - mean > uu) for uu in u])
    bound = np.exp(-u * u / (2 * sigma_i))
    se = np.sqrt(np.maximum(freq * (1 - freq), 1.0 / n_samples) / n_samples)
    z = (bound - freq) / se
    worst = int(np.argmin(z))
    return _mc_report("borell_tis", f"{grid.count} grid points, {n_samples} paths",
                      float(bound[worst] - freq[worst]), float(se[worst]),
                      mean_sup=mean, se_mean_sup=float(sup.std(ddof=1) / math.sqrt(n_samples)),
                      u=u.tolist(), freq=freq.tolist(), bound=bound.tolist())


@dataclass
class SupReport:
    N: float
    empirical_E_sup: float
    se: float
    bound_shape: float
    implied_K: float
    grid_step: float


def dudley_sup_stationary(rho: SpectralMeasure, N: float, n_samples: int = 100_000, rng=None,
                          step: float | None = None) -> SupReport:
    """Empirical E sup_[0,N] f against the entropy shape sqrt(m0 max(log(aN), 1))."""
    m0 = total_mass(rho)
    m2 = moment(rho, 2.0)
    if m2 == INF:
        raise InapplicableError("m_2 is infinite")
    if rho.domain is Domain.CONTINUOUS:
        limit = min(1.0, 1.0 / math.sqrt(m2)) / 4
        step = limit if step is None else step
        if step > limit * (1 + 1e-12):
            raise ValidationError(f"grid step {step!r} coarser than the entropy scale {limit!r}")
    grid = _default_grid(rho, N, step)
    sup = _paths(rho, grid, n_samples, rng).max(axis=1)
    a = math.sqrt(m2 / (4 * m0))
    shape = math.sqrt(m0 * max(math.log(a * N), 1.0)) if a * N > 0 else math.sqrt(m0)
    mean = float(sup.mean())
    return SupReport(N, mean, float(sup.std(ddof=1) / math.sqrt(n_samples)), shape, mean / shape,
                     grid.step)


def _check_floor(rho, b, gamma, lam_max):
    lam = np.geomspace(1e-6, lam_max, 400)
    ratio = max(half_line_mass(rho, float(l)) / (b * l ** gamma) for l in lam)
    return ratio


def dudley_sup_antiderivative(rho: SpectralMeasure, b: float, gamma: float, N: float,
                              n_samples: int = 100_000, rng=None, step: float = 0.05) -> SupReport:
    """Empirical E sup_{x <= N} int_0^x f against sqrt(b m0) N^(1 - gamma/2).

    Integer time uses partial sums; continuous time the trapezoid rule on the grid.
    """
    if not (0 <= gamma < 2) or not b > 0:
        raise ValidationError("need b > 0 and 0 <= gamma < 2")
    top = rho.support_sup if rho.support_sup < INF else 1e6
    ratio = _check_floor(rho, b, gamma, max(2 * top, 1.0))
    if ratio > 1 + 1e-9:
        raise InapplicableError(f"rho([0, lam]) <= b lam^gamma fails (worst ratio {ratio:.4g})")
    m0 = total_mass(rho)
    if rho.domain is Domain.INTEGER:
        grid = PathGrid(Domain.INTEGER, 1, 1, int(N))
        paths = _paths(rho, grid, n_samples, rng)
        running = np.cumsum(paths, axis=1)
    else:
        grid = _default_grid(rho, N, step)
        paths = _paths(rho, grid, n_samples, rng)
        running = np.concatenate([np.zeros((paths.shape[0], 1)),
                                  np.cumsum(0.5 * grid.step * (paths[:, 1:] + paths[:, :-1]), axis=1)],
                                 axis=1)
    sup = np.maximum(running.max(axis=1), 0.0)
    shape = math.sqrt(b * m0) * N ** (1 - gamma / 2)
    mean = float(sup.mean())
    return SupReport(N, mean, float(sup.std(ddof=1) / math.sqrt(n_samples)), shape, mean / shape,
                     grid.step)


# ---------------------------------------------------------------- anti-derivative variance

@dataclass
class AntiderivVariance:
    N: float
    value: float
    error: float
    bound: float | None = None
    bound_holds: bool | None = None


def _sinc2_kernel(lam, N):
    # N^2 sinc^2(N lam / 2) = 2 (1 - cos(N lam)) / lam^2, written to stay accurate near 0
    half = 0.5 * N * np.asarray(lam, dtype=float)
    return N * N * np.sinc(half / math.pi) ** 2


def antideriv_variance(rho: SpectralMeasure, N: float, b: float | None = None,
                       gamma: float | None = None) -> AntiderivVariance:
    """var(int_0^N f) = N^2 int sinc^2(N lam / 2) d rho(lam), by panel-wise quadrature.

    With (b, gamma) declared it also checks the bound 16 b / (2 - gamma) m0 N^(2 - gamma).
    """
    if rho.domain is not Domain.CONTINUOUS:
        raise ValidationError("antideriv_variance is stated for continuous time")
    if rho.weight_power:
        raise ValidationError("pass a plain measure (no derivative weights)")
    val = sum(m * float(_sinc2_kernel(f, N)) for f, m in rho.atoms)
    err = 0.0
    period = 2 * math.pi / N
    for seg in rho.segments:
        top = seg.b
        tail = 0.0
        if top == INF:
            # beyond a cutoff the kernel is at most 4/lam^2 times the density; integrate that tail
            top = max(seg.a, 1e3 * period, 100.0)
            t_val, t_err = integrate.quad(lambda x: _sinc2_kernel(x, N) * seg.density(x), top, INF,
                                          limit=500)
            tail, err = tail + t_val, err + t_err
        edges = np.arange(seg.a, top, period)
        edges = np.append(edges, top) if edges[-1] < top else edges
        for lo, hi in zip(edges[:-1], edges[1:]):
            f = (lambda x: _sinc2_kernel(x, N) * seg.density(x))
            opts = {"limit": 200, "epsabs": 1e-13, "epsrel": 1e-11}
            z = seg.zero_exponent()
            if lo == 0 and z is not None and z < 0:
                # integrable power singularity at the origin
                v, e = integrate.quad(lambda x: _sinc2_kernel(x, N) * seg.c, lo, hi,
                                      weight="alg", wvar=(z, 0.0), **opts)
            else:
                v, e = integrate.quad(f, lo, hi, **opts)
            val += 2 * v
            err += 2 * e
        val += 2 * tail
    out = AntiderivVariance(N, float(val), float(err))
    if b is not None and gamma is not None:
        if not (0 <= gamma < 2):
            raise ValidationError("gamma must lie in [0, 2)")
        out.bound = 16 * b / (2 - gamma) * total_mass(rho) * N ** (2 - gamma)
        out.bound_holds = bool(out.value <= out.bound * (1 + DET_TOL))
    return out


def path_integral_variance_mc(rho: SpectralMeasure, N: float, step: float, n_samples: int = 100_000,
                              rng=None) -> tuple[float, float]:
    """Sample variance of the trapezoid integral of simulated paths over [0, N], with its se."""
    grid = _default_grid(rho, N, step)
    paths = _paths(rho, grid, n_samples, rng)
    w = np.full(grid.count, grid.step)
    w[0] = w[-1] = 0.5 * grid.step
    integral = paths @ w
    var = float(np.mean(integral**2))
    # the integral is centered Gaussian, so var of integral^2 is 2 var^2
    return var, var * math.sqrt(2.0 / n_samples)


# ---------------------------------------------------------------- large ball calibration

def large_ball_check(rho: SpectralMeasure, c: float, ell_grid, N: float, n_samples: int = 100_000,
                     rng=None, step: float = 1 / 16) -> CheckReport:
    """P(|h| <= ell on [0, N]) >= P(c |h(0)| <= ell)^N for each ell; reports the empirical threshold.

    The threshold is the smallest grid ell from which the inequality holds for all larger grid ells.
    """
    if not c >= 1:
        raise ValidationError("the large-ball constant c must be at least 1")
    if rho.domain is not Domain.CONTINUOUS:
        raise ValidationError("large_ball_check is stated for continuous time")
    if step > 1 / 16 + 1e-15:
        raise ValidationError("grid step must be at most 1/16")
    if rho.moment_delta is None or moment(rho, rho.moment_delta) == INF:
        raise InapplicableError("a finite positive moment must be declared")
    grid = _default_grid(rho, N, step)
    sigma = linalg.toeplitz(_row(rho, grid))
    sd0 = math.sqrt(sigma[0, 0])
    ells = sorted(float(e) for e in ell_grid)
    rows = []
    for ell in ells:
        box = (np.full(grid.count, -ell), np.full(grid.count, ell))
        log_lhs, se = box_probability_mc(sigma, *box, n_samples, rng, "large-ball")
        log_rhs = float(N * log_ball(ell / (c * sd0)))
        rows.append((ell, log_lhs, se, log_rhs, log_lhs - log_rhs >= -3 * se))
    threshold = None
    for ell, *_, ok in reversed(rows):
        if not ok:
            break
        threshold = ell
    ell, log_lhs, se, log_rhs, _ = rows[-1]
    return _mc_report("large_ball", f"{grid.count} grid points, {len(ells)} levels, {n_samples} samples",
                      log_lhs - log_rhs, se, threshold=threshold, c=c,
                      levels=[{"ell": r[0], "log_lhs": r[1], "se_log": r[2], "log_rhs": r[3],
                               "holds": r[4]} for r in rows])


def _row(rho, grid):
    from .spectral import covariance
    return covariance(rho, grid.step * np.arange(grid.count))
