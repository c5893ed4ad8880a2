"""Chebyshev extrema, divided differences, simplex integrals and the deterministic k-th derivative inequality."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, interpolate

from .errors import ValidationError
from .rng import as_rng, ordered_map

MONIC_TOL = 1e-12
CONTINUOUS_WINDOWS = {"9/20": 0.45, "9/10": 0.9}
DISCRETE_WINDOW = 0.9
SUP_SAMPLES = 10_000
SUP_REFINE = 10
L_BUDGET = 20.0


@dataclass(frozen=True)
class NodeSet:
    k: int
    nodes: np.ndarray
    kind: str = "Custom"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.shape != (self.k + 1,):
            raise ValidationError(f"need k+1 = {self.k + 1} nodes, got {nodes.shape}")
        object.__setattr__(self, "nodes", nodes)


def extrema(k: int) -> NodeSet:
    if int(k) != k or k < 1:
        raise ValidationError("k must be a positive integer")
    k = int(k)
    nodes = np.cos((k - np.arange(k + 1)) * np.pi / k)
    # cos rounding leaves +-1e-17 instead of exact symmetric values
    nodes[0], nodes[-1] = -1.0, 1.0
    nodes = 0.5 * (nodes - nodes[::-1])
    if k % 2 == 0:
        nodes[k // 2] = 0.0
    return NodeSet(k, nodes, "ChebyshevExtrema")


def chebyshev_value(k: int, x):
    """T_k(x) on [-1, 1] by the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1):
        raise ValidationError("Chebyshev evaluation needs |x| <= 1")
    prev, cur = np.ones_like(x), x.copy()
    if k == 0:
        return prev if prev.ndim else float(prev)
    for _ in range(k - 1):
        prev, cur = cur, 2 * x * cur - prev
    return cur if cur.ndim else float(cur)


# ---------------------------------------------------------------- divided differences

@dataclass
class DividedDiffTable:
    nodes: np.ndarray
    values: np.ndarray
    table: list
    leading: float


def _node_array(nodes) -> np.ndarray:
    return nodes.nodes if isinstance(nodes, NodeSet) else np.asarray(nodes, dtype=float)


def divided_difference(nodes, values) -> DividedDiffTable:
    x = _node_array(nodes)
    y = np.asarray(values, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("nodes and values must be vectors of equal length")
    if np.unique(x).size != x.size:
        raise ValidationError("divided differences need distinct nodes")
    table = [y.copy()]
    for order in range(1, x.size):
        prev = table[-1]
        table.append((prev[1:] - prev[:-1]) / (x[order:] - x[:-order]))
    return DividedDiffTable(x, y, table, float(table[-1][0]))


@dataclass
class MinNormReport:
    k: int
    max_abs_at_extrema: float
    threshold: float
    passed: bool


def min_norm_check(coeffs) -> MinNormReport:
    """Coefficients in increasing degree; the polynomial is made monic first."""
    c = np.asarray(coeffs, dtype=float)
    if c.size < 2 or c[-1] == 0:
        raise ValidationError("need a polynomial of degree >= 1 with nonzero leading coefficient")
    c = c / c[-1]
    k = c.size - 1
    vals = np.polynomial.polynomial.polyval(extrema(k).nodes, c)
    top = float(np.max(np.abs(vals)))
    threshold = 2.0 ** (1 - k)
    return MinNormReport(k, top, threshold, top >= threshold - MONIC_TOL)


def monic_chebyshev_coeffs(k: int) -> np.ndarray:
    """Increasing-degree coefficients of 2^(1-k) T_k."""
    c = np.polynomial.chebyshev.cheb2poly(np.eye(k + 1)[k])
    return c / c[-1]


# ---------------------------------------------------------------- simplex integrals

def simplex_weights(gen: np.random.Generator, n: int, k: int) -> np.ndarray:
    """Uniform points on the k-simplex from spacings of sorted uniforms, shape (n, k+1)."""
    u = np.sort(gen.random((n, k)), axis=1)
    edges = np.concatenate([np.zeros((n, 1)), u, np.ones((n, 1))], axis=1)
    return np.diff(edges, axis=1)


@dataclass
class MCValue:
    estimate: float
    se: float
    n_samples: int


_HG_BATCHES = 32


def hermite_genocchi_mc(fk, nodes, n_mc: int = 100_000, rng=None, workers: int = 1) -> MCValue:
    """Monte Carlo value of the simplex integral of fk(sum t_j x_j) under the volume-1/k! measure."""
    x = _node_array(nodes)
    k = x.size - 1
    rng = as_rng(rng)
    sizes = np.full(_HG_BATCHES, n_mc // _HG_BATCHES)
    sizes[: n_mc % _HG_BATCHES] += 1

    def batch(i):
        t = simplex_weights(rng.generator("hermite-genocchi", i), int(sizes[i]), k)
        return float(np.mean(_vector(fk)(t @ x)))

    means = np.array(ordered_map(batch, range(_HG_BATCHES), workers))
    scale = 1.0 / math.factorial(k)
    est = float(np.average(means, weights=sizes)) * scale
    se = float(np.std(means, ddof=1) / math.sqrt(_HG_BATCHES)) * scale
    return MCValue(est, se, int(n_mc))


@dataclass
class SimplexDensityReport:
    k: int
    s_grid: np.ndarray
    density: np.ndarray
    se: np.ndarray
    bandwidth: float
    sensitivity: dict
    empirical_L: float
    positive: bool


def _reflected_kde(samples, grid, bw):
    """Gaussian KDE reflected at +-1; per-grid-point kernel means and their standard errors."""
    dens, se = np.empty(grid.size), np.empty(grid.size)
    for i, s in enumerate(grid):
        kern = (np.exp(-0.5 * ((s - samples) / bw) ** 2)
                + np.exp(-0.5 * ((s - (2 - samples)) / bw) ** 2)
                + np.exp(-0.5 * ((s - (-2 - samples)) / bw) ** 2)) / (bw * math.sqrt(2 * math.pi))
        dens[i] = kern.mean()
        se[i] = kern.std(ddof=1) / math.sqrt(kern.size)
    return dens, se


def simplex_density_check(k: int, s_grid=None, n_mc: int = 100_000, rng=None) -> SimplexDensityReport:
    """Estimate g_k(s), the density of sum t_j x_j over the Chebyshev extrema scaled by 1/k!."""
    if not 1 <= k <= 8:
        raise ValidationError("simplex_density_check supports 1 <= k <= 8")
    grid = np.linspace(-0.9, 0.9, 37) if s_grid is None else np.asarray(s_grid, dtype=float)
    if np.any(np.abs(grid) > 0.9 + 1e-12):
        raise ValidationError("s_grid must lie in [-0.9, 0.9]")
    gen = as_rng(rng).generator("simplex-density", k)
    s = simplex_weights(gen, n_mc, k) @ extrema(k).nodes
    bw = 1.06 * float(np.std(s)) * n_mc ** (-0.2)
    dens, se = _reflected_kde(s, grid, bw)
    fact = math.factorial(k)
    sens = {}
    for factor in (0.5, 1.5):
        d, _ = _reflected_kde(s, grid, bw * factor)
        sens[factor] = float(d.min() / fact)
    g = dens / fact
    low = float(g.min())
    L = (fact * low) ** (-1 / k) if low > 0 else math.inf
    return SimplexDensityReport(k, grid, g, se / fact, bw, sens, L, bool(low > 0))


# ---------------------------------------------------------------- continuous inequality

@dataclass
class ContinuousReport:
    k: int
    N: float
    window: str
    lhs: float
    sup: float
    sup_tolerance: float
    min_fk: float
    implied_c0: float
    rhs_over_c0k: float

    def holds_at(self, c0: float) -> bool:
        return self.lhs <= (c0 * self.k / self.N) ** self.k * self.sup

    def to_record(self) -> dict:
        return {"k": self.k, "N": self.N, "window": self.window, "lhs": self.lhs, "sup": self.sup,
                "sup_tolerance": self.sup_tolerance, "min_fk": self.min_fk,
                "implied_c0": self.implied_c0}


_GOLD = (math.sqrt(5) - 1) / 2


def _refine_max(g, a, b, tol):
    c, d = b - _GOLD * (b - a), a + _GOLD * (b - a)
    gc, gd = g(c), g(d)
    while b - a > tol:
        if gc >= gd:
            b, d, gd = d, c, gc
            c = b - _GOLD * (b - a)
            gc = g(c)
        else:
            a, c, gc = c, d, gd
            d = a + _GOLD * (b - a)
            gd = g(d)
    return max(gc, gd)


def sup_abs(f, lo: float, hi: float, n: int = SUP_SAMPLES, n_refine: int = SUP_REFINE):
    """max |f| on [lo, hi] by dense sampling plus golden refinement around the top samples."""
    f_scalar = _scalar(f)
    x = np.linspace(lo, hi, n)
    v = np.abs(_vector(f)(x))
    best = float(v.max())
    step = x[1] - x[0]
    tol = 1e-10 * max(1.0, hi - lo)
    for i in np.argsort(-v, kind="stable")[:n_refine]:
        a, b = max(lo, x[i] - step), min(hi, x[i] + step)
        best = max(best, _refine_max(lambda t: abs(f_scalar(t)), a, b, tol))
    return best, tol


def _vector(fn):
    """Accept callables that return a scalar for constant functions."""
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(fn(x), dtype=float), x.shape)
    return wrapped


def _scalar(fn):
    vec = _vector(fn)
    return lambda t: float(vec(np.array([t]))[0])


def _positivity(fk, lo, hi, n=2001):
    return float(_vector(fk)(np.linspace(lo, hi, n)).min())


def verify_continuous(f, fk, k: int, N: float, window: str = "9/20") -> ContinuousReport:
    """Check (1/N) int_{-wN}^{wN} f^(k) against (c0 k / N)^k sup_[-N,N] |f|.

    ``implied_c0`` is the smallest c0 for which the inequality holds. With the
    9/10 window the proposition-level normalization is reported instead:
    the smallest c with sup |f| >= c^-k once the window integral equals k!/N^(k-1).
    """
    if window not in CONTINUOUS_WINDOWS:
        raise ValidationError(f"window must be one of {sorted(CONTINUOUS_WINDOWS)}")
    if not (1 <= k <= N):
        raise ValidationError("need 1 <= k <= N")
    min_fk = _positivity(fk, -N, N)
    if not min_fk > 0:
        raise ValidationError(f"f^(k) must be positive on [-N, N]; sampled minimum {min_fk!r}")
    w = CONTINUOUS_WINDOWS[window]
    # split at 0 so that narrow features near the centre are not skipped
    ends = (-w * N, 0.0, w * N)
    fk_scalar = _scalar(fk)
    total = sum(integrate.quad(fk_scalar, a, b, limit=400, epsabs=0, epsrel=1e-10)[0]
                for a, b in zip(ends, ends[1:]))
    lhs = total / N
    sup, tol = sup_abs(f, -N, N)
    if window == "9/20":
        implied = (N / k) * (lhs / sup) ** (1 / k)
    else:
        implied = (N ** k * lhs / (math.factorial(k) * sup)) ** (1 / k)
    return ContinuousReport(k, N, window, lhs, sup, tol, min_fk, implied, sup * (k / N) ** k)


@dataclass
class RandomCase:
    f: object
    fk: object
    k: int
    N: float


def random_positive_case(gen: np.random.Generator, k: int, N: float, n_basis: int = 8) -> RandomCase:
    """f = k-fold antiderivative of a positive spline plus a random polynomial of degree < k."""
    degree = int(gen.integers(0, 4))
    inner = np.sort(gen.uniform(-N, N, n_basis - degree - 1))
    knots = np.concatenate([np.full(degree + 1, -N), inner, np.full(degree + 1, N)])
    coef = gen.uniform(0.05, 1.0, knots.size - degree - 1) * np.exp(gen.normal(0, 1, knots.size - degree - 1))
    floor = float(gen.uniform(0.0, 0.1)) * float(coef.max())
    base = interpolate.BSpline(knots, coef + floor, degree, extrapolate=True)
    anti = base.antiderivative(k)
    poly = gen.normal(0, 1, k) * (N ** np.arange(k)) ** -1.0 * float(np.max(np.abs(anti(np.linspace(-N, N, 64)))))

    def f(x):
        x = np.asarray(x, dtype=float)
        return anti(x) + np.polynomial.polynomial.polyval(x, poly)

    def fk(x):
        return base(np.asarray(x, dtype=float))

    return RandomCase(f, fk, k, N)


# ---------------------------------------------------------------- B-splines and the discrete inequality

def bspline_value(k: int, x):
    """Centered cardinal B-spline of degree k (k+1 fold convolution of the unit box)."""
    if int(k) != k or not 0 <= k <= 20:
        raise ValidationError("B-spline order must be an integer in [0, 20]")
    k = int(k)
    x = np.asarray(x, dtype=float)
    y = x + (k + 1) / 2
    # order-m spline on knots 0..m: M_m(y) = (y M_{m-1}(y) + (m - y) M_{m-1}(y - 1)) / (m - 1)
    shifts = y[..., None] - np.arange(k + 1)
    vals = ((shifts >= 0) & (shifts < 1)).astype(float)
    for m in range(2, k + 2):
        vals = (shifts[..., : k + 2 - m] * vals[..., :-1]
                + (m - shifts[..., : k + 2 - m]) * vals[..., 1:]) / (m - 1)
    out = vals[..., 0]
    return out if out.ndim else float(out)


def forward_difference(values, k: int) -> np.ndarray:
    return np.diff(np.asarray(values, dtype=float), n=k)


def smoothing(f_values, n0: int, k: int, x):
    """F(x) = sum_n f(n) B_k(x - n) for samples f(n0), f(n0+1), ..."""
    f_values = np.asarray(f_values, dtype=float)
    x = np.asarray(x, dtype=float)
    n = n0 + np.arange(f_values.size)
    return bspline_value(k, x[..., None] - n) @ f_values


def smoothing_derivative(f_values, n0: int, k: int, x):
    """F'(x) for F = smoothing(f, k): sum_n (Delta f)(n) B_{k-1}(x - n - 1/2)."""
    d = forward_difference(f_values, 1)
    return smoothing(d, n0, k - 1, np.asarray(x, dtype=float) - 0.5)


@dataclass
class DiscreteReport:
    k: int
    N: int
    lhs: float
    normalized_hypothesis: float
    sup: float
    implied_c: float
    min_delta_k: float
    smoothing_min: float
    smoothing_window: tuple
    details: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {"k": self.k, "N": self.N, "lhs": self.lhs, "sup": self.sup, "implied_c": self.implied_c,
                "min_delta_k": self.min_delta_k, "smoothing_min": self.smoothing_min,
                "smoothing_window": list(self.smoothing_window),
                "normalized_hypothesis": self.normalized_hypothesis}


def verify_discrete(f_values, k: int, N: int, n_probe: int = 2001) -> DiscreteReport:
    """Discrete form on [-2N, 2N]: f_values[i] = f(i - 2N).

    ``implied_c`` is the smallest c with sup_[-2N,2N] |f| >= c^-k after scaling f
    so that (1/N) sum_{I_N} Delta^k f = k!/N^k. The smoothing F = sum f(n) B_{k+1}(x-n)
    has F^(k)(x) = sum Delta^k f(n) B_1(x - n - k/2); its positivity is probed on the
    window where only n in [-N, N] contribute.
    """
    f_values = np.asarray(f_values, dtype=float)
    if int(N) != N or int(k) != k or not (1 <= k <= N):
        raise ValidationError("need integers 1 <= k <= N")
    N, k = int(N), int(k)
    if f_values.shape != (4 * N + 1,):
        raise ValidationError(f"expected {4 * N + 1} values on [-2N, 2N]")
    n0 = -2 * N
    dk = forward_difference(f_values, k)  # dk[i] = Delta^k f(n0 + i)
    core = dk[N: 3 * N + 1]               # n in [-N, N]
    min_dk = float(core.min())
    if not min_dk > 0:
        raise ValidationError(f"Delta^k f must be positive on [-N, N]; minimum {min_dk!r}")
    m = math.floor(DISCRETE_WINDOW * N + 1e-12)
    lhs = float(core[N - m: N + m + 1].sum()) / N
    sup = float(np.max(np.abs(f_values)))
    implied = (N ** k * lhs / (math.factorial(k) * sup)) ** (1 / k)
    lo, hi = -N + 1 + k / 2, N - 1 + k / 2
    probe = np.linspace(lo, hi, n_probe)
    Fk = smoothing(core, -N, 1, probe - k / 2)
    return DiscreteReport(k, N, lhs, lhs * N ** k / math.factorial(k), sup, implied, min_dk,
                          float(Fk.min()), (lo, hi))
