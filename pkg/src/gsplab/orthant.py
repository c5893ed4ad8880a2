"""Orthant probabilities P(X > 0) of centered Gaussian vectors.

Small dimensions are exact: closed arcsine forms up to dimension 3, and for
dimensions 4-7 Plackett's reduction

    dP/d r_ij = phi_2(0, 0; r_ij) * P_{d-2}(conditional correlation given X_i = X_j = 0)

integrated along the path I + t (R - I), t in [0, 1], with adaptive composite
Gauss-Legendre rules. Large dimensions use sequential conditioning with greedy
variable ordering and scrambled Sobol points, all in log space.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy import optimize, special
from scipy.stats import qmc

from .errors import CovarianceInvalidError, ValidationError
from .rng import as_rng, ordered_map, split_counts

LOG_HALF = math.log(0.5)
DECREMENT_TOL = 1e-9


@dataclass
class PersistenceEstimate:
    log_p: float
    se_log: float
    method: str
    n_samples: int
    grid_step: float | str = "integer"
    low_confidence: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def p(self) -> float:
        return math.exp(self.log_p)

    @property
    def se_p(self) -> float:
        return self.p * self.se_log if self.se_log < math.inf else math.inf

    def to_record(self) -> dict:
        return {"log_p": self.log_p, "se_log": self.se_log, "method": self.method,
                "n_samples": self.n_samples, "grid_step": self.grid_step,
                "low_confidence": self.low_confidence}


def _as_correlation(cov) -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ValidationError("covariance must be a square matrix")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
        raise ValidationError("covariance must be symmetric")
    d = np.sqrt(np.diag(cov))
    if np.any(~(d > 0)):
        raise CovarianceInvalidError("covariance has a non-positive diagonal entry")
    corr = cov / np.outer(d, d)
    if cov.shape[0] > 1 and np.linalg.eigvalsh(corr)[0] < -1e-10:
        raise CovarianceInvalidError("covariance is not positive semidefinite")
    corr = np.clip(corr, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return corr


# ---------------------------------------------------------------- exact small dimensions

_GL_CACHE: dict = {}


def _gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _orthant_batch(R: np.ndarray, tol: float) -> tuple[np.ndarray, float]:
    """Orthant probabilities of a batch of correlation matrices (B, d, d)."""
    d = R.shape[-1]
    if d == 0:
        return np.ones(R.shape[0]), 0.0
    if d == 1:
        return np.full(R.shape[0], 0.5), 0.0
    if d == 2:
        return 0.25 + np.arcsin(R[:, 0, 1]) / (2 * math.pi), 0.0
    if d == 3:
        s = np.arcsin(R[:, 0, 1]) + np.arcsin(R[:, 0, 2]) + np.arcsin(R[:, 1, 2])
        return 0.125 + s / (4 * math.pi), 0.0
    return _plackett(R, tol)


def _plackett_integrand(R: np.ndarray, t: np.ndarray, tol: float):
    """Sum over pairs of r_ij * dP/dr_ij at I + t (R - I); shape (B, len(t))."""
    B, d, _ = R.shape
    pairs = list(combinations(range(d), 2))
    nt = t.size
    eye = np.eye(d - 2)
    blocks, weights = [], []
    for i, j in pairs:
        rest = [m for m in range(d) if m not in (i, j)]
        r = R[:, i, j][:, None] * t[None, :]                          # (B, nt)
        det = np.clip(1.0 - r * r, 1e-300, None)
        weights.append(R[:, i, j][:, None] / (2 * math.pi * np.sqrt(det)))
        cross_t = R[:, rest][:, :, [i, j]][:, None] * t[None, :, None, None]   # (B, nt, d-2, 2)
        inner = R[:, rest][:, :, rest]
        inner_t = eye + (inner[:, None] - eye) * t[None, :, None, None]
        inv = np.empty((B, nt, 2, 2))
        inv[..., 0, 0] = inv[..., 1, 1] = 1.0 / det
        inv[..., 0, 1] = inv[..., 1, 0] = -r / det
        cond = inner_t - cross_t @ inv @ np.swapaxes(cross_t, -1, -2)
        sd = np.sqrt(np.clip(np.einsum("ztii->zti", cond), 1e-300, None))
        blocks.append(np.clip(cond / (sd[..., :, None] * sd[..., None, :]), -1.0, 1.0))
    stacked = np.stack(blocks).reshape(len(pairs) * B * nt, d - 2, d - 2)
    sub, err = _orthant_batch(stacked, tol)
    sub = sub.reshape(len(pairs), B, nt)
    return np.sum(np.stack(weights) * sub, axis=0), err


def _plackett(R: np.ndarray, tol: float) -> tuple[np.ndarray, float]:
    d = R.shape[-1]
    base = 0.5 ** d
    total = np.zeros(R.shape[0])
    err_total = 0.0
    stack = [(0.0, 1.0, 0)]
    n = 12
    x_lo, w_lo = _gauss_legendre(n)
    x_hi, w_hi = _gauss_legendre(2 * n)
    while stack:
        a, b, depth = stack.pop()
        half, mid = 0.5 * (b - a), 0.5 * (a + b)
        f_lo, e1 = _plackett_integrand(R, mid + half * x_lo, tol)
        f_hi, e2 = _plackett_integrand(R, mid + half * x_hi, tol)
        i_lo = half * f_lo @ w_lo
        i_hi = half * f_hi @ w_hi
        diff = float(np.max(np.abs(i_hi - i_lo)))
        if diff <= tol * (b - a) or depth >= 12:
            total += i_hi
            err_total += diff + half * 2 * (e1 + e2)
        else:
            stack.extend([(a, mid, depth + 1), (mid, b, depth + 1)])
    return np.clip(base + total, 0.0, 1.0), err_total


def orthant_probability(cov, tol: float = 1e-10) -> tuple[float, float]:
    """(P(X > 0), error bound) for dimension <= 7."""
    corr = _as_correlation(cov)
    d = corr.shape[0]
    if d > 7:
        raise ValidationError("exact orthant probabilities limited to dimension 7")
    p, err = _orthant_batch(corr[None], tol)
    return float(p[0]), float(err)


def exact_orthant_small(cov, tol: float = 1e-10) -> PersistenceEstimate:
    p, err = orthant_probability(cov, tol)
    if p <= 0:
        return PersistenceEstimate(-math.inf, math.inf if err > 0 else 0.0, "ExactSmall", 0)
    return PersistenceEstimate(math.log(p), err / p, "ExactSmall", 0,
                               extra={"abs_error": err})


# ---------------------------------------------------------------- sequential conditioning

@dataclass
class ConditioningPlan:
    """Reordered Cholesky-type factor of a covariance for box probabilities."""
    order: np.ndarray
    L: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degenerate: np.ndarray
    tilt: np.ndarray | None = None


def _log_box(lo, hi):
    """log(Phi(hi) - Phi(lo)) elementwise, stable in both tails."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    b = np.where(flip, -lo, hi)
    # now a <= 0 side handled: log(Phi(b) - Phi(a)) with a <= 0 or symmetric
    lb, la = special.log_ndtr(b), special.log_ndtr(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = lb + np.log1p(-np.exp(np.minimum(la - lb, 0.0)))
    return np.where(b > a, out, -np.inf)


def _truncnorm_mean(lo, hi):
    logz = _log_box(lo, hi)
    with np.errstate(over="ignore", invalid="ignore"):
        pl = np.where(np.isfinite(lo), np.exp(-0.5 * np.square(np.where(np.isfinite(lo), lo, 0))
                                                  - 0.5 * math.log(2 * math.pi) - logz), 0.0)
        ph = np.where(np.isfinite(hi), np.exp(-0.5 * np.square(np.where(np.isfinite(hi), hi, 0))
                                                  - 0.5 * math.log(2 * math.pi) - logz), 0.0)
    mean = pl - ph
    return np.where(np.isfinite(mean), mean, np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0)))


def plan_conditioning(cov, lower, upper, reorder: bool = True, degenerate_tol: float = 1e-10) -> ConditioningPlan:
    """Greedy ordering: at each step pick the variable with the smallest conditional box
    probability given the earlier variables at their truncated means."""
    C = np.array(cov, dtype=float)
    a = np.array(lower, dtype=float)
    b = np.array(upper, dtype=float)
    d = C.shape[0]
    order = np.arange(d)
    L = np.zeros((d, d))
    y = np.zeros(d)
    degenerate = np.zeros(d, dtype=bool)
    diag_scale = np.sqrt(np.maximum(np.diag(C), 1e-300))
    for i in range(d):
        rem = np.arange(i, d)
        var = C[rem, rem] - np.einsum("ij,ij->i", L[rem, :i], L[rem, :i])
        sd = np.sqrt(np.clip(var, 0.0, None))
        mu = L[rem, :i] @ y[:i]
        is_deg = sd <= degenerate_tol * diag_scale[order[rem]]
        if reorder:
            with np.errstate(divide="ignore", invalid="ignore"):
                score = _log_box((a[rem] - mu) / sd, (b[rem] - mu) / sd)
            score = np.where(is_deg, np.inf, score)
            pick = i + int(np.argmin(score))
        else:
            pick = i
        if pick != i:
            for arr in (a, b, order):
                arr[[i, pick]] = arr[[pick, i]]
            C[[i, pick]] = C[[pick, i]]
            C[:, [i, pick]] = C[:, [pick, i]]
            L[[i, pick]] = L[[pick, i]]
        v = C[i, i] - L[i, :i] @ L[i, :i]
        s = math.sqrt(max(v, 0.0))
        if s <= degenerate_tol * diag_scale[order[i]]:
            degenerate[i] = True
            y[i] = 0.0
            continue
        L[i, i] = s
        L[i + 1:, i] = (C[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / s
        m = L[i, :i] @ y[:i]
        y[i] = float(_truncnorm_mean(np.array([(a[i] - m) / s]), np.array([(b[i] - m) / s]))[0])
    return ConditioningPlan(order, L, a, b, degenerate)


def _log_phi(x):
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(x), -0.5 * np.square(np.where(np.isfinite(x), x, 0.0))
                        - 0.5 * math.log(2 * math.pi), -np.inf)


def _mills(c):
    """phi(c) / (1 - Phi(c)), accurate in both tails."""
    return math.sqrt(2 / math.pi) / special.erfcx(c / math.sqrt(2))


# asymptotic coefficients in 1/c of mills(c) - c and of the truncated variance
_EXCESS_SERIES = (1.0, -2.0, 10.0, -74.0, 706.0, -8162.0, 110410.0, -1708394.0)
_VAR_SERIES = (1.0, -6.0, 50.0, -518.0, 6354.0, -89782.0, 1435330.0)
_SERIES_FROM = 25.0


def _mills_excess(c):
    """(mills(c) - c, variance of Z given Z > c); the direct forms cancel for large c."""
    c = np.asarray(c, dtype=float)
    big = c >= _SERIES_FROM
    psi = _mills(np.where(big, 0.0, c))
    excess = psi - np.where(big, 0.0, c)
    var = 1.0 - psi * excess
    inv2 = 1.0 / np.square(np.where(big, c, _SERIES_FROM))
    ex_big = np.polynomial.polynomial.polyval(inv2, _EXCESS_SERIES) / np.where(big, c, 1.0)
    var_big = np.polynomial.polynomial.polyval(inv2, _VAR_SERIES) * inv2
    return np.where(big, ex_big, excess), np.where(big, var_big, var)


def _solve_shift(r):
    """c with mills(c) - c = r for r > 0 (the map is strictly decreasing in c).

    Brackets from the Mills bounds: mills(c) > 0 puts the root above -r, and
    mills(c) < c + 1/c puts it below 1/r.
    """
    lo, hi = -r, 1.0 / r
    c = np.where(r > 1, -r + 1.0 / r, 0.5 * (lo + np.minimum(hi, 1.0)))
    log_r = np.log(r)
    for _ in range(100):
        excess, var = _mills_excess(c)
        f = np.log(excess) - log_r
        hi = np.where(f < 0, c, hi)
        lo = np.where(f > 0, c, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = c + f * excess / var
        bad = ~np.isfinite(nxt) | (nxt <= lo) | (nxt >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        if np.max(np.abs(nxt - c) / (1 + np.abs(c))) < 1e-14:
            return nxt
        c = nxt
    return c


def minimax_tilt(plan: ConditioningPlan, maxiter: int = 100) -> np.ndarray | None:
    """Exponential tilt of the conditional draws for orthant-type boxes (upper limits infinite).

    The tilt is the saddle point of the log weight
        psi(x, mu) = sum_k mu_k^2/2 - x_k mu_k + log P(Z > l_k(x) - mu_k),
    found by maximizing the concave profile psi*(x) = min_mu psi(x, mu) over the
    feasible region x_k > l_k(x). The inner minimization splits into independent
    one-dimensional problems. Returns None when not applicable or not converged.
    """
    keep = np.flatnonzero(~plan.degenerate)
    m = keep.size
    d = plan.L.shape[0]
    if m < 2:
        return np.zeros(d)
    if np.any(np.isfinite(plan.upper[keep])) or not np.all(np.isfinite(plan.lower[keep])):
        return None
    s = np.diag(plan.L)[keep]
    Lk = plan.L[np.ix_(keep, keep)] / s[:, None]
    np.fill_diagonal(Lk, 0.0)
    lo = plan.lower[keep] / s
    n = m - 1

    def profile(x):
        xf = np.append(x, 0.0)
        lvl = lo - Lk @ xf
        r = x - lvl[:n]
        if np.any(r <= 0):
            return None
        c = np.append(_solve_shift(r), lvl[n])
        mu = np.append(lvl[:n] - c[:n], 0.0)
        psi = float(np.sum(0.5 * mu * mu - xf * mu) + np.sum(special.log_ndtr(-c)))
        return psi, c, mu

    def derivatives(x, c, mu):
        excess, var_all = _mills_excess(c)
        mills = c + excess
        grad = (-mu + Lk.T @ mills)[:n]
        g = 1.0 - var_all
        var = var_all[:n]
        h_xx = -(Lk.T * g) @ Lk
        h_xmu = -np.eye(m) - Lk.T * g
        cross = h_xmu[:n, :n]
        hess = h_xx[:n, :n] - (cross / var) @ cross.T
        return grad, hess

    # the truncated-mean path is strictly feasible
    x = np.zeros(m)
    for i in range(m):
        x[i] = _truncnorm_mean(np.array([lo[i] - Lk[i] @ x]), np.array([np.inf]))[0]
    x = x[:n]
    cur = profile(x)
    if cur is None:
        return None
    # near-singular factors leave a gradient floor, so convergence is judged by
    # the Newton decrement, which is scale free
    decrement = math.inf
    for _ in range(maxiter):
        psi, c, mu = cur
        grad, hess = derivatives(x, c, mu)
        if np.max(np.abs(grad)) < 1e-9:
            decrement = 0.0
            break
        neg = -hess
        shift = 0.0
        while True:
            try:
                chol = np.linalg.cholesky(neg + shift * np.eye(n))
                break
            except np.linalg.LinAlgError:
                shift = max(2 * shift, 1e-8 * max(1.0, np.abs(neg).max()))
        step = np.linalg.solve(chol.T, np.linalg.solve(chol, grad))
        decrement = float(grad @ step)
        if decrement < DECREMENT_TOL * max(1.0, abs(psi)):
            break
        t = 1.0
        while t > 1e-12:
            trial = profile(x + t * step)
            if trial is not None and trial[0] >= psi + 1e-4 * t * float(grad @ step):
                break
            t *= 0.5
        else:
            break
        x, cur = x + t * step, trial
    psi, c, mu = cur
    if not np.all(np.isfinite(mu)) or not decrement < DECREMENT_TOL * max(1.0, abs(psi)):
        return None
    tilt = np.zeros(d)
    tilt[keep[:n]] = mu[:n]
    return tilt


def _sov_log_weights(plan: ConditioningPlan, u: np.ndarray) -> np.ndarray:
    """Log importance weights for uniforms u of shape (n, d)."""
    n = u.shape[0]
    d = plan.L.shape[0]
    tilt = plan.tilt if plan.tilt is not None else np.zeros(d)
    logw = np.zeros(n)
    z = np.zeros((n, d))
    u = np.clip(u, 1e-16, 1 - 1e-16)
    for i in range(d):
        mu = z[:, :i] @ plan.L[i, :i]
        if plan.degenerate[i]:
            ok = (mu > plan.lower[i]) & (mu < plan.upper[i])
            logw = np.where(ok, logw, -np.inf)
            continue
        s = plan.L[i, i]
        t = tilt[i]
        lo = (plan.lower[i] - mu) / s - t
        hi = (plan.upper[i] - mu) / s - t
        lp = _log_box(lo, hi)
        logw = logw + lp
        if i == d - 1:
            break
        # inverse-CDF draw from N(0,1) truncated to (lo, hi); use the tail nearer the box
        upper_tail = lo > -hi
        with np.errstate(divide="ignore", invalid="ignore"):
            z_low = special.ndtri_exp(np.logaddexp(special.log_ndtr(lo), np.log(u[:, i]) + lp))
            z_up = -special.ndtri_exp(np.logaddexp(special.log_ndtr(-hi), np.log1p(-u[:, i]) + lp))
        zi = np.where(upper_tail, z_up, z_low)
        zi = np.where(np.isfinite(zi), zi, np.where(upper_tail, lo, hi))
        zi = np.clip(zi, lo, hi) + t
        if t != 0.0:
            logw = logw + 0.5 * t * t - t * zi
        z[:, i] = zi
    return logw


def _sobol_uniforms(dim: int, n: int, gen: np.random.Generator) -> np.ndarray:
    engine = qmc.Sobol(dim, scramble=True, seed=int(gen.integers(2**63)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return engine.random(n)


def _batch_estimate(batch_logs: list[np.ndarray]) -> tuple[float, float]:
    all_logs = np.concatenate(batch_logs)
    n = all_logs.size
    top = np.max(all_logs)
    if not np.isfinite(top):
        return -math.inf, math.inf
    log_p = float(special.logsumexp(all_logs) - math.log(n))
    means = np.array([np.mean(np.exp(bl - top)) for bl in batch_logs])
    sizes = np.array([bl.size for bl in batch_logs], dtype=float)
    mean = float(np.sum(means * sizes) / n)
    k = len(batch_logs)
    se_rel = float(np.std(means, ddof=1) / math.sqrt(k) / mean) if k > 1 else math.inf
    return log_p, se_rel


def _box_mc(cov, lower, upper, n_samples, rng, tag, workers, reorder, tilt):
    rng = as_rng(rng)
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    plan = plan_conditioning(cov, lower, upper, reorder=reorder)
    if tilt:
        plan.tilt = minimax_tilt(plan)
    batches = max(32, rng.stream_count)
    counts = [c for c in split_counts(n_samples, batches) if c > 0]

    def run(j):
        u = _sobol_uniforms(max(d, 1), counts[j], rng.generator(tag, j))
        return _sov_log_weights(plan, u)

    log_p, se = _batch_estimate(ordered_map(run, range(len(counts)), workers))
    return log_p, se, plan


def box_probability_mc(cov, lower, upper, n_samples: int, rng=None, tag: str = "box",
                       workers: int = 1, reorder: bool = True, tilt: bool = True) -> tuple[float, float]:
    """(log P(lower < X < upper), se of the log) by sequential conditioning."""
    log_p, se, _ = _box_mc(cov, lower, upper, n_samples, rng, tag, workers, reorder, tilt)
    return log_p, se


def genz_orthant(cov, n_samples: int = 100_000, rng=None, workers: int = 1,
                 max_dim: int = 512) -> PersistenceEstimate:
    """Sequential-conditioning estimate of P(X > 0) with greedy variable ordering.

    Draws are exponentially tilted when the saddle point is found; when it is
    not (numerically singular covariances), the estimate is flagged low-confidence.
    """
    cov = np.asarray(cov, dtype=float)
    d = cov.shape[0]
    if d > max_dim:
        raise ValidationError(f"dimension {d} exceeds the orthant estimator cap {max_dim}")
    corr = _as_correlation(cov)
    if n_samples < 32:
        raise ValidationError("need at least 32 samples (one per batch)")
    log_p, se, plan = _box_mc(corr, np.zeros(d), np.full(d, np.inf), n_samples, rng, "orthant",
                              workers, True, True)
    tilted = plan.tilt is not None
    return PersistenceEstimate(log_p, se, "OrthantMC", n_samples,
                               low_confidence=bool(se > 1 or not tilted),
                               extra={"tilted": tilted, "degenerate": int(plan.degenerate.sum())})
