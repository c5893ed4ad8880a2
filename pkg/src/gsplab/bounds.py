"""General lower/upper persistence bounds, the k(N) selector, regime classes and slope fits.

Both bounds are functions of a free level ell. Each is unimodal in log ell (a
decreasing Gaussian tail term against an increasing small-ball term), so the
optimizers scan a bracket in log ell, then refine the best local extrema by
golden-section search. Brackets are built from the scales of the problem
(sigma_N, beta, ell_0) so that rescaling the measure rescales them exactly.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import special

from .errors import InapplicableError, ValidationError
from .gauss_tools import log_ball, log_normal_ccdf
from .rng import as_rng
from .spectral import (INF, Domain, SpectralMeasure, log_moment, moment, normalize, sigma_sq,
                       total_mass)

UNIVERSAL_FLAG = "up to universal constants"
HEURISTIC_FLAG = "heuristic (continuous-time beta, ell0 supplied by the user)"
INTEGER_BETA = 2 * math.sqrt(2)


@dataclass
class UniversalConstants:
    c0: float = 1.0
    c1: float = 1.0
    c_s: float = 1.0
    K_dudley: float = 1.0


@dataclass
class BoundParams:
    """Parameters of both bounds.

    ``beta``/``ell0`` feed the lower bound (fixed to 2 sqrt 2 and 0 over the
    integers). ``k``/``s`` split the negative moment exponent gamma = 2k + s of
    the upper bound; ``k=None`` lets optimize_upper scan k. ``E``/``nu`` declare
    an interval on which the density is at least nu; ``q=None`` picks the
    smallest q >= 1 with E/q inside [-pi, pi].
    """

    beta: float | None = None
    ell0: float | None = None
    k: int | None = None
    s: float = 0.0
    q: float | None = None
    E: tuple[float, float] | None = None
    nu: float | None = None
    constants: UniversalConstants = field(default_factory=UniversalConstants)

    @property
    def r(self) -> float:
        return max(self.k or 0, self.s / 2)

    @property
    def gamma(self) -> float:
        return 2 * (self.k or 0) + self.s


@dataclass
class BoundResult:
    log_bound: float
    ell_star: float
    factors: dict
    params_used: BoundParams
    flags: list = field(default_factory=list)
    k_used: int | None = None

    def to_record(self) -> dict:
        return {"log_bound": self.log_bound, "ell_star": self.ell_star, "factors": self.factors,
                "k_used": self.k_used, "flags": list(self.flags)}


def _normalized(rho: SpectralMeasure) -> tuple[SpectralMeasure, float]:
    m0 = total_mass(rho)
    if abs(m0 - 1.0) <= 1e-12:
        return rho, 1.0
    return normalize(rho), m0


# ---------------------------------------------------------------- one-dimensional search

_INVPHI = (math.sqrt(5) - 1) / 2


def _golden(f, a, b, tol=1e-11):
    """Maximize f on [a, b] by golden-section search; returns (x, f(x))."""
    c, d = b - _INVPHI * (b - a), a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    fx = f(x)
    best = max([(fx, x), (fc, c), (fd, d)])
    return best[1], best[0]


def _maximize_log(f, lo, hi, n_grid=81, starts=3):
    """Maximize f(u) over u in [lo, hi]: grid scan, then golden refinement around the best starts."""
    grid = np.linspace(lo, hi, n_grid)
    vals = np.array([f(u) for u in grid])
    finite = np.isfinite(vals)
    if not finite.any():
        return grid[int(np.argmax(vals))], float(np.max(vals))
    order = np.argsort(np.where(finite, -vals, np.inf), kind="stable")[:starts]
    best = (-math.inf, lo)
    for i in order:
        a, b = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
        u, v = _golden(f, a, b)
        if vals[i] > v:
            u, v = grid[i], vals[i]
        best = max(best, (v, u))
    return best[1], best[0]


# ---------------------------------------------------------------- lower bound

def _lower_setup(rho: SpectralMeasure, params: BoundParams):
    if rho.domain is Domain.INTEGER:
        return INTEGER_BETA, 0.0, []
    if params.beta is None or params.ell0 is None:
        raise InapplicableError("continuous-time lower bounds need user-supplied beta and ell0")
    return float(params.beta), float(params.ell0), [HEURISTIC_FLAG]


def lower_bound_log(rho: SpectralMeasure, N: float, ell: float,
                    params: BoundParams | None = None) -> BoundResult:
    """log[ P(sigma_N Z > ell) * P(beta |Z| < ell)^N ]."""
    params = params or BoundParams()
    rho, _ = _normalized(rho)
    beta, ell0, flags = _lower_setup(rho, params)
    if not ell > ell0:
        raise ValidationError(f"level ell={ell!r} must exceed ell0={ell0!r}")
    used = replace(params, beta=beta, ell0=ell0)
    sigma = math.sqrt(sigma_sq(rho, N))
    ball = float(N * log_ball(ell / beta))
    if sigma == 0:
        return BoundResult(-math.inf, ell, {"tail": -math.inf, "ball": ball}, used,
                           flags + ["sigma_N = 0"])
    tail = float(log_normal_ccdf(ell / sigma))
    return BoundResult(tail + ball, ell, {"tail": tail, "ball": ball}, used, flags)


def optimize_lower(rho: SpectralMeasure, N: float, params: BoundParams | None = None) -> BoundResult:
    """Maximize the lower bound over ell > ell0."""
    params = params or BoundParams()
    rho, _ = _normalized(rho)
    beta, ell0, flags = _lower_setup(rho, params)
    sigma = math.sqrt(sigma_sq(rho, N))
    used = replace(params, beta=beta, ell0=ell0)
    if sigma == 0:
        return BoundResult(-math.inf, math.nan, {"tail": -math.inf, "ball": math.nan}, used,
                           flags + ["sigma_N = 0"])
    scale = max(sigma, beta * math.sqrt(1 + math.log1p(N)))
    lo = math.log(max(ell0, 1e-6 * scale))
    hi = math.log(20 * scale)
    if ell0 > 0:
        lo = math.log(ell0) + 1e-12
        hi = max(hi, lo + math.log(20))

    def f(u):
        ell = math.exp(u)
        return float(log_normal_ccdf(ell / sigma) + N * log_ball(ell / beta))

    u, _ = _maximize_log(f, lo, hi)
    return lower_bound_log(rho, N, math.exp(u), params)


# ---------------------------------------------------------------- upper bound

@dataclass
class _UpperSetup:
    alpha: float
    beta: float
    r: float
    q: float
    N0: float
    ell0: float
    E: tuple
    nu: float
    flags: list


def _floor(rho: SpectralMeasure, params: BoundParams):
    """The declared (E, nu), or the support and height of a lone constant segment."""
    if params.E is not None and params.nu is not None:
        E = (float(params.E[0]), float(params.E[1]))
        if not E[1] > E[0]:
            raise ValidationError("the floor set E must be a nondegenerate interval")
        return E, float(params.nu), False
    if params.E is not None or params.nu is not None:
        raise ValidationError("declare both E and nu, or neither")
    if not rho.atoms and len(rho.segments) == 1 and rho.segments[0].form == "constant":
        seg = rho.segments[0]
        E = (-seg.b, seg.b) if seg.a == 0 else (seg.a, seg.b)
        return E, seg.c, True
    raise InapplicableError("upper bounds need a declared absolutely continuous floor (E, nu)")


def _check_floor(rho: SpectralMeasure, E, nu):
    probe = np.abs(np.linspace(E[0], E[1], 257))
    dens = np.zeros_like(probe)
    for seg in rho.segments:
        inside = (probe >= seg.a) & (probe <= seg.b)
        if inside.any():
            dens[inside] = seg.density(probe[inside])
    if np.any(dens < nu * (1 - 1e-12)):
        raise ValidationError(f"density falls below the declared floor nu={nu!r} on E={E!r}")


def _upper_setup(rho: SpectralMeasure, N: float, params: BoundParams, k: int) -> _UpperSetup:
    E, nu, auto = _floor(rho, params)
    _check_floor(rho, E, nu)
    s = float(params.s)
    if not (0 <= s < 2):
        raise ValidationError("s must lie in [0, 2)")
    cst = params.constants
    length = E[1] - E[0]
    r = max(k, s / 2)
    top = max(abs(E[0]), abs(E[1]))
    q = params.q if params.q is not None else max(1.0, top / math.pi)
    if top / q > math.pi * (1 + 1e-12):
        raise ValidationError(f"q={q!r} does not bring E inside [-pi, pi]")
    alpha = cst.c0 * length
    if k > 0:
        m = moment(rho, -2 * k)
        if m == INF:
            raise InapplicableError(f"m_{-2 * k} is infinite")
        beta = (cst.c1 * k) ** (-k) * math.sqrt(nu * length / m)
    else:
        m = moment(rho, -s) if s > 0 else 1.0
        if m == INF:
            raise InapplicableError(f"m_{-s!r} is infinite")
        beta = cst.c_s * math.sqrt(nu * length / m)
    num = moment(rho, 2 - 2 * k)
    den = moment(rho, -2 * k) if k > 0 else 1.0
    if num == INF:
        raise InapplicableError(f"m_{2 - 2 * k} is infinite, so ell0(N) is undefined")
    N0 = 2 * math.pi / length
    if not N > max(N0, k):
        raise InapplicableError(f"N={N!r} must exceed max(N0, k) = {max(N0, k)!r}")
    arg = num / (4 * den) * N * N
    inner = math.sqrt(0.5 * math.log(arg)) if arg > 1 else 0.0
    ell0 = 2 * N ** (-r) * max(inner, 1.0)
    flags = [UNIVERSAL_FLAG] + (["floor auto-detected from a constant segment"] if auto else [])
    return _UpperSetup(alpha, beta, r, q, N0, ell0, E, nu, flags)


def _upper_value(st: _UpperSetup, N: float, ell: float):
    tail = float(log_normal_ccdf(ell * N ** st.r))
    ball = math.log(2 * st.q * N) + st.alpha * N * float(log_ball(ell / st.beta))
    return float(np.logaddexp(tail, ball)), tail, ball


def upper_bound_log(rho: SpectralMeasure, N: float, ell: float,
                    params: BoundParams | None = None) -> BoundResult:
    """log[ P(N^-r Z > ell) + 2 q N P(beta |Z| < ell)^(alpha N) ] for ell > ell0(N)."""
    params = params or BoundParams()
    rho, _ = _normalized(rho)
    k = params.k or 0
    st = _upper_setup(rho, N, params, k)
    if not ell > st.ell0:
        raise ValidationError(f"level ell={ell!r} must exceed ell0(N)={st.ell0!r}")
    value, tail, ball = _upper_value(st, N, ell)
    used = replace(params, k=k, q=st.q, E=st.E, nu=st.nu)
    return BoundResult(value, ell, {"tail": tail, "ball": ball, "alpha": st.alpha, "beta": st.beta,
                                    "ell0": st.ell0, "N0": st.N0}, used, st.flags, k)


def _optimize_upper_k(rho, N, params, k) -> BoundResult:
    st = _upper_setup(rho, N, params, k)
    lo = math.log(st.ell0) + 1e-12
    hi = math.log(max(st.ell0, st.beta)) + math.log(1e3)

    def f(u):
        return -_upper_value(st, N, math.exp(u))[0]

    u, _ = _maximize_log(f, lo, hi)
    return upper_bound_log(rho, N, math.exp(u), replace(params, k=k))


def optimize_upper(rho: SpectralMeasure, N: float, params: BoundParams | None = None) -> BoundResult:
    """Minimize the upper bound over ell > ell0(N), and over k in 0..k(N) unless k is pinned."""
    params = params or BoundParams()
    rho, _ = _normalized(rho)
    ks = [params.k] if params.k is not None else range(0, k_of_N(rho, N) + 1)
    best, reasons = None, []
    for k in ks:
        try:
            res = _optimize_upper_k(rho, N, params, k)
        except InapplicableError as exc:
            reasons.append(f"k={k}: {exc}")
            continue
        if best is None or res.log_bound < best.log_bound:
            best = res
    if best is None:
        raise InapplicableError("no admissible (k, ell): " + "; ".join(reasons))
    return best


# ---------------------------------------------------------------- k(N)

def k_of_N(rho: SpectralMeasure, N: float) -> int:
    """max{k in 1..N : k m_{-2k}^{1/k} <= N} for the normalized measure, 0 if empty.

    For a probability measure m_{-2k}^{1/(2k)} is nondecreasing in k, so the
    admissible k form an initial segment and the scan stops at the first failure.
    """
    if not N >= 1:
        raise ValidationError("N must be at least 1")
    rho, _ = _normalized(rho)
    log_n = math.log(N)
    k = 0
    for cand in range(1, int(math.floor(N)) + 1):
        lm = log_moment(rho, -2 * cand)
        if lm == INF or math.log(cand) + lm / cand > log_n + 1e-12:
            break
        k = cand
    return k


# ---------------------------------------------------------------- regimes

REGIME_CLASSES = ("PowerLog", "Linear", "NLogN", "Quadratic", "ExpExp")
SIDES = ("Lower", "Upper", "Both")


@dataclass
class RegimeClass:
    cls: str
    side: str
    conditions: str
    exponent: float | None = None

    @property
    def expression(self) -> str:
        if self.cls == "PowerLog":
            return f"-N^{self.exponent:g} log N"
        return {"Linear": "-N", "NLogN": "-N log N", "Quadratic": "-N^2", "ExpExp": "-exp(C N)"}[self.cls]

    def to_record(self) -> dict:
        return {"class": self.cls, "side": self.side, "exponent": self.exponent,
                "expression": self.expression, "conditions": self.conditions}


_EXPWELL = re.compile(r"^expwell\(\s*([0-9.eE+-]+)\s*\)$")
_POWER_TAIL = re.compile(r"^power\(\s*([0-9.eE+-]+)\s*\)$")


def _parse_features(features: dict):
    zero = features.get("alpha_at_zero")
    tail = str(features.get("tail", "compact")).strip()
    gap_flag = bool(features.get("gap", False))
    if gap_flag and zero not in (None, "gap"):
        raise ValidationError("inconsistent features: a spectral gap cannot also have an exponent at 0")
    if gap_flag:
        zero = "gap"
    if zero is None:
        raise ValidationError("features need alpha_at_zero")
    if isinstance(zero, str):
        z = zero.strip()
        if z == "gap":
            kind, value = "gap", None
        elif _EXPWELL.match(z):
            kind, value = "expwell", float(_EXPWELL.match(z).group(1))
            if not value > 0:
                raise ValidationError("expwell exponent must be positive")
        else:
            try:
                kind, value = "power", float(z)
            except ValueError:
                raise ValidationError(f"unrecognized alpha_at_zero {zero!r}") from None
    else:
        kind, value = "power", float(zero)
    if kind == "power" and not value > -1:
        raise ValidationError("alpha_at_zero must exceed -1 (integrability at the origin)")
    if tail in ("compact", "log"):
        tail_kind, tail_alpha = tail, None
    elif _POWER_TAIL.match(tail):
        tail_kind, tail_alpha = "power", float(_POWER_TAIL.match(tail).group(1))
        if not tail_alpha > 0:
            raise ValidationError("tail exponent must be positive")
    else:
        raise ValidationError(f"unrecognized tail {tail!r}")
    return kind, value, tail_kind, tail_alpha


def envelope(features: dict, domain) -> list[RegimeClass]:
    """Predicted asymptotic classes of log P_f(N) from the behaviour of the density at 0 and at infinity.

    ``features``: {"alpha_at_zero": real | "gap" | "expwell(A)", "tail": "compact" | "power(a)" | "log"}.
    """
    domain = Domain.parse(domain)
    kind, value, tail_kind, tail_alpha = _parse_features(features)
    if domain is Domain.INTEGER and tail_kind != "compact":
        raise ValidationError("integer-time spectra are compact; tails apply to continuous time only")
    out: list[RegimeClass] = []
    if kind == "power":
        a = value
        if a < 0:
            out.append(RegimeClass("PowerLog", "Both", f"density ~ lam^{a:g} near 0 (-1 < alpha < 0)", 1 + a))
        elif a == 0:
            out.append(RegimeClass("Linear", "Both", "density bounded above and below near 0"))
        else:
            side = "Both" if domain is Domain.INTEGER else "Upper"
            cond = f"density ~ lam^{a:g} near 0 (alpha > 0)"
            if domain is Domain.CONTINUOUS:
                cond += "; no matching lower bound in continuous time"
            out.append(RegimeClass("NLogN", side, cond))
    elif kind == "gap":
        out.append(RegimeClass("Quadratic", "Upper", "spectrum vanishes on an interval around 0; "
                               "a matching -N^2 lower bound for integer time with a density is known "
                               "from external work and is not computed here"))
        if domain is Domain.CONTINUOUS and tail_kind == "power":
            out.append(RegimeClass("ExpExp", "Upper",
                                   f"spectral gap plus density >= lam^-{tail_alpha:g} for |lam| > 1"))
    else:
        A = value
        out.append(RegimeClass("PowerLog", "Upper",
                               f"density exp(-|lam|^-{A:g}) near 0: m_(-2k) grows like k^(2k/{A:g})",
                               1 + A / (A + 2)))
    finite_m2 = kind == "gap" or kind == "expwell" or (kind == "power" and value > 1)
    if domain is Domain.CONTINUOUS and tail_kind == "power" and finite_m2:
        out.append(RegimeClass("PowerLog", "Upper",
                               f"m_-2 finite plus density >= lam^-{tail_alpha:g} for |lam| > 1",
                               1 + 1 / tail_alpha))
    return out


def features_of(rho: SpectralMeasure) -> dict:
    """Derive envelope features from a parametric measure."""
    if any(f == 0 and m > 0 for f, m in rho.atoms):
        raise InapplicableError("an atom at 0 is outside the regime table")
    at_zero = [s for s in rho.segments if s.a == 0]
    if not at_zero:
        zero = "gap"
    else:
        seg = at_zero[0]
        if seg.form == "expwell":
            if seg.scale != 1.0:
                raise InapplicableError("expwell with a non-unit scale is outside the regime table")
            zero = f"expwell({seg.A!r})"
        elif seg.form in ("constant", "power", "powertail"):
            zero = seg.zero_exponent()
        else:
            raise InapplicableError(f"{seg.describe()} has no power behaviour at 0")
    tail = "compact"
    for seg in rho.segments:
        if seg.b == INF:
            tail = f"power({seg.alpha!r})" if seg.form == "powertail" else "log"
    return {"alpha_at_zero": zero, "tail": tail}


# ---------------------------------------------------------------- slope fits

@dataclass
class SlopeFit:
    exponent: float
    ci: tuple[float, float]
    intercept: float
    model: str
    n_points: int


def _fit_design(N, L, model):
    x = np.log(N)
    y = np.log(L)
    if model == "PowerTimesLog":
        y = y - np.log(np.log(N))
    elif model != "PowerOfN":
        raise ValidationError(f"unknown model {model!r}")
    return x, y


def slope_fit(curve, model: str = "PowerOfN", n_boot: int = 2000, rng=None) -> SlopeFit:
    """Least-squares exponent of -log p against N, with a parametric bootstrap interval.

    ``curve`` holds CurvePoint-like items (N, estimate with log_p, se_log) or
    (N, log_p, se_log) tuples. PowerTimesLog fits -log p = C N^e log N.
    """
    pts = []
    for item in curve:
        if isinstance(item, tuple):
            N, lp, se = item
        else:
            if getattr(item, "estimate", None) is None:
                continue
            N, lp, se = item.N, item.estimate.log_p, item.estimate.se_log
        pts.append((float(N), float(lp), float(se)))
    if len(pts) < 4:
        raise ValidationError("slope_fit needs at least 4 points")
    N = np.array([p[0] for p in pts])
    lp = np.array([p[1] for p in pts])
    se = np.array([p[2] for p in pts])
    if not np.all(np.isfinite(lp)) or np.any(lp >= 0):
        raise ValidationError("all log_p must be finite and negative")
    if np.any(~(se < 0.5 * np.abs(lp))):
        raise ValidationError("every point needs se_log < 0.5 |log_p|")
    if model == "PowerTimesLog" and np.any(N <= 1):
        raise ValidationError("PowerTimesLog needs N > 1")
    x, y = _fit_design(N, -lp, model)
    slope, intercept = np.polyfit(x, y, 1)
    gen = as_rng(rng).generator("slope-fit", 0)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        # se_log is the standard error of log p, hence an additive error on log p
        sample = lp + se * gen.standard_normal(lp.size)
        sample = np.minimum(sample, -1e-300)
        boots[b] = np.polyfit(*_fit_design(N, -sample, model), 1)[0]
    ci = (float(np.quantile(boots, 0.025)), float(np.quantile(boots, 0.975)))
    return SlopeFit(float(slope), ci, float(intercept), model, len(pts))


# ---------------------------------------------------------------- tables

BOUNDS_COLUMNS = ("N", "lower_log", "upper_log", "ell_star_lower", "ell_star_upper", "k_used", "flags")


def bounds_table(rho: SpectralMeasure, N_list, params: BoundParams | None = None) -> list[dict]:
    params = params or BoundParams()
    rows = []
    for N in N_list:
        flags = []
        try:
            lo = optimize_lower(rho, N, params)
            lower, ell_lo = lo.log_bound, lo.ell_star
            flags += lo.flags
        except (InapplicableError, ValidationError) as exc:
            lower, ell_lo = math.nan, math.nan
            flags.append(f"lower: {exc}")
        try:
            up = optimize_upper(rho, N, params)
            upper, ell_up, k_used = up.log_bound, up.ell_star, up.k_used
            flags += [f for f in up.flags if f not in flags]
        except (InapplicableError, ValidationError) as exc:
            upper, ell_up, k_used = math.nan, math.nan, ""
            flags.append(f"upper: {exc}")
        rows.append({"N": N, "lower_log": lower, "upper_log": upper, "ell_star_lower": ell_lo,
                     "ell_star_upper": ell_up, "k_used": k_used, "flags": "; ".join(flags)})
    return rows
