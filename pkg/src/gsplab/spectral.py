"""Symmetric spectral measures of stationary Gaussian processes.

A measure is stored on the nonnegative half-line and mirrored. It is made of

* atoms ``(freq, mass)``: an atom at ``freq > 0`` stands for the pair
  ``+-freq`` carrying ``mass`` in total; an atom at 0 carries its full mass;
* density segments on disjoint intervals ``[a, b]`` of ``[0, inf)``, each with a
  parametric density ``w``; a segment contributes ``2 * int_a^b`` to every integral.

Derivative and anti-derivative measures keep the segments untouched and carry a
multiplier ``weight(lam) ** weight_power`` with ``weight = lam**2`` in continuous
time and ``2 - 2 cos(lam)`` in integer time. Atoms are transformed eagerly.

Divergence of moments is decided from the segment exponents, never from
quadrature overflow; a divergent integral is returned as ``math.inf``.
"""
from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import mpmath
import numpy as np
from scipy import integrate, linalg

from .errors import InapplicableError, ValidationError

SCHEMA_VERSION = 1
QUAD_EPSABS = 1e-12
QUAD_EPSREL = 1e-11
QUAD_LIMIT = 2000
INF = math.inf


class Domain(str, enum.Enum):
    INTEGER = "integer"
    CONTINUOUS = "continuous"

    @classmethod
    def parse(cls, value) -> "Domain":
        if isinstance(value, Domain):
            return value
        key = str(value).strip().lower()
        aliases = {"integer": cls.INTEGER, "integertime": cls.INTEGER, "z": cls.INTEGER,
                   "continuous": cls.CONTINUOUS, "continuoustime": cls.CONTINUOUS, "r": cls.CONTINUOUS}
        if key not in aliases:
            raise ValidationError(f"unknown domain {value!r}")
        return aliases[key]


FORM_PARAMS = {
    "constant": ("c",),
    "power": ("c", "alpha"),
    "expwell": ("c", "A", "scale"),
    "powertail": ("c", "alpha"),
    "logtail": ("c", "scale"),
}


@dataclass(frozen=True)
class DensitySegment:
    """Parametric density on ``[a, b]``.

    Forms: ``constant`` c; ``power`` c lam^alpha; ``expwell`` c exp(-(lam/scale)^-A);
    ``powertail`` c lam^-alpha; ``logtail`` c / (lam log^2(lam/scale)).
    """

    form: str
    a: float
    b: float
    c: float
    alpha: float = 0.0
    A: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.form not in FORM_PARAMS:
            raise ValidationError(f"unknown segment form {self.form!r}")
        a, b = float(self.a), float(self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        for name in ("c", "alpha", "A", "scale"):
            object.__setattr__(self, name, float(getattr(self, name)))
        tag = self.describe()
        if not (math.isfinite(a) and a >= 0 and b > a):
            raise ValidationError(f"{tag}: support must satisfy 0 <= a < b")
        if not self.c > 0 or not math.isfinite(self.c):
            raise ValidationError(f"{tag}: coefficient c must be positive and finite")
        if b == INF and self.form not in ("powertail", "logtail"):
            raise ValidationError(f"{tag}: only powertail/logtail segments may extend to infinity")
        if self.form == "power" and a == 0 and not self.alpha > -1:
            raise ValidationError(f"{tag}: power segment touching 0 needs alpha > -1")
        if self.form == "powertail":
            if b == INF and not self.alpha > 1:
                raise ValidationError(f"{tag}: untruncated powertail needs alpha > 1")
            if a == 0 and not self.alpha < 1:
                raise ValidationError(f"{tag}: powertail touching 0 needs alpha < 1")
        if self.form == "expwell" and not (self.A > 0 and self.scale > 0):
            raise ValidationError(f"{tag}: expwell needs A > 0 and scale > 0")
        if self.form == "logtail" and not (self.scale > 0 and a > self.scale):
            raise ValidationError(f"{tag}: logtail needs a > scale (a > 1 for unit scale)")

    def describe(self) -> str:
        params = ", ".join(f"{p}={getattr(self, p)!r}" for p in FORM_PARAMS[self.form])
        return f"{self.form}({params}) on [{self.a!r}, {self.b!r}]"

    def density(self, lam):
        lam = np.asarray(lam, dtype=float)
        if self.form == "constant":
            return np.full_like(lam, self.c)
        if self.form == "power":
            return self.c * lam ** self.alpha
        if self.form == "powertail":
            return self.c * lam ** (-self.alpha)
        if self.form == "expwell":
            with np.errstate(divide="ignore", over="ignore"):
                u = lam / self.scale
                return np.where(u > 0, self.c * np.exp(-(u ** -self.A)), 0.0)
        return self.c / (lam * np.log(lam / self.scale) ** 2)

    def zero_exponent(self) -> float | None:
        """Exponent of the leading power of the density at 0 (None if flat or undefined)."""
        if self.form == "constant":
            return 0.0
        if self.form == "power":
            return self.alpha
        if self.form == "powertail":
            return -self.alpha
        return None

    def regular(self, lam):
        """density / lam**zero_exponent, bounded near 0."""
        z = self.zero_exponent()
        if z is None:
            return self.density(lam)
        return np.full_like(np.asarray(lam, dtype=float), self.c)

    def with_c(self, c: float) -> "DensitySegment":
        return replace(self, c=c)

    def to_config(self) -> dict:
        params = {p: getattr(self, p) for p in FORM_PARAMS[self.form]}
        return {"support": [self.a, "inf" if self.b == INF else self.b],
                "form": self.form, "params": params}


@dataclass(frozen=True)
class SpectralMeasure:
    domain: Domain
    atoms: tuple = ()
    segments: tuple = ()
    weight_power: int = 0
    moment_delta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        atoms = tuple((float(f), float(m)) for f, m in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        segs = tuple(sorted(self.segments, key=lambda s: s.a))
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "weight_power", int(self.weight_power))
        for f, m in atoms:
            if not (math.isfinite(f) and f >= 0):
                raise ValidationError(f"atom location {f!r} must be finite and >= 0")
            if not (math.isfinite(m) and m >= 0):
                raise ValidationError(f"atom mass {m!r} at {f!r} must be finite and >= 0")
            if self.domain is Domain.INTEGER and f > math.pi + 1e-15:
                raise ValidationError(f"atom at {f!r} outside [0, pi] for integer time")
        for prev, nxt in zip(segs, segs[1:]):
            if nxt.a < prev.b:
                raise ValidationError(f"segments overlap: {prev.describe()} and {nxt.describe()}")
        if self.domain is Domain.INTEGER:
            for s in segs:
                if s.b > math.pi + 1e-15:
                    raise ValidationError(f"{s.describe()}: integer-time support must lie in [0, pi]")
        if not atoms and not segs:
            raise ValidationError("measure has neither atoms nor segments")

    @property
    def support_sup(self) -> float:
        tops = [f for f, m in self.atoms if m > 0] + [s.b for s in self.segments]
        return max(tops) if tops else 0.0

    def validate(self) -> "SpectralMeasure":
        """Full check: every segment integrable, positive finite mass, declared moment finite."""
        for s in self.segments:
            if _segment_integral(s, s.a, s.b, 0.0, self.weight_power, self.domain)[0] == INF:
                raise ValidationError(f"{s.describe()}: non-integrable segment (infinite mass)")
        m0 = total_mass(self)
        if not (m0 > 0 and math.isfinite(m0)):
            raise ValidationError(f"total mass must be finite and positive, got {m0!r}")
        if self.moment_delta is not None:
            if not self.moment_delta > 0:
                raise ValidationError("declared moment exponent must be positive")
            if moment(self, self.moment_delta) == INF:
                raise ValidationError(f"declared moment m_{self.moment_delta!r} is infinite")
        return self


# ---------------------------------------------------------------- integration core

def _weight(lam, p: int, domain: Domain):
    if p == 0:
        return 1.0
    if domain is Domain.CONTINUOUS:
        return lam ** (2 * p)
    return (4.0 * np.sin(lam / 2.0) ** 2) ** p


def _weight_regular(lam, p: int, domain: Domain):
    """weight / lam**(2p); equals 1 at lam = 0."""
    if p == 0 or domain is Domain.CONTINUOUS:
        return 1.0
    return np.sinc(lam / (2.0 * math.pi)) ** (2 * p)


def _diverges(seg: DensitySegment, lo: float, hi: float, power: float, p: int) -> bool:
    e = power + 2 * p
    if lo == 0:
        z = seg.zero_exponent()
        if z is not None and e + z <= -1:
            return True
    if hi == INF:
        if seg.form == "powertail" and e - seg.alpha >= -1:
            return True
        if seg.form == "logtail" and e > 0:
            return True
    return False


def _power_primitive(e: float, lo: float, hi: float):
    """int_lo^hi lam^e dlam (convergence already checked)."""
    lo_m, hi_m = mpmath.mpf(lo), (mpmath.inf if hi == INF else mpmath.mpf(hi))
    if e == -1:
        return mpmath.log(hi_m / lo_m)
    e1 = mpmath.mpf(e) + 1
    if hi == INF:
        return -(lo_m ** e1) / e1
    if lo == 0:
        return hi_m ** e1 / e1
    return (hi_m ** e1 - lo_m ** e1) / e1


def _expwell_primitive(seg: DensitySegment, e: float, lo: float, hi: float):
    """int_lo^hi lam^e exp(-(lam/s)^-A) dlam via the generalized incomplete gamma function."""
    s, A = mpmath.mpf(seg.scale), mpmath.mpf(seg.A)
    sigma = -(mpmath.mpf(e) + 1) / A
    x_hi = (mpmath.mpf(hi) / s) ** (-A)
    x_lo = mpmath.inf if lo == 0 else (mpmath.mpf(lo) / s) ** (-A)
    return s ** (mpmath.mpf(e) + 1) / A * mpmath.gammainc(sigma, x_hi, x_lo)


def _closed_form(seg: DensitySegment, lo: float, hi: float, e: float):
    c = mpmath.mpf(seg.c)
    if seg.form == "constant":
        return c * _power_primitive(e, lo, hi)
    if seg.form == "power":
        return c * _power_primitive(e + seg.alpha, lo, hi)
    if seg.form == "powertail":
        return c * _power_primitive(e - seg.alpha, lo, hi)
    if seg.form == "expwell":
        return c * _expwell_primitive(seg, e, lo, hi)
    if seg.form == "logtail" and e == 0:
        s = mpmath.mpf(seg.scale)
        top = 0 if hi == INF else 1 / mpmath.log(mpmath.mpf(hi) / s)
        return c * (1 / mpmath.log(mpmath.mpf(lo) / s) - top)
    return None


def _quad(f, a, b, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(f, a, b, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL,
                                  limit=QUAD_LIMIT, **kw)[:2]
    return float(val), float(err)


def _quadrature(seg, lo, hi, power, p, domain, t=None):
    """Adaptive quadrature of int_lo^hi lam^power w weight [cos(t lam)].

    An algebraic singularity at 0 is handled by an algebraic-weight rule on the
    first panel (of length at most pi/|t| when oscillating); the remainder uses
    the oscillatory rules for cos weights or plain adaptive rules.
    """
    osc = t is not None and t != 0
    total, err = 0.0, 0.0
    z = seg.zero_exponent() if lo == 0 else None
    if z is not None:
        ex = power + 2 * p + z
        if not (ex >= 0 and float(ex).is_integer()):
            x1 = hi
            if osc:
                x1 = min(x1, math.pi / abs(t))
            x1 = min(x1, 1.0) if hi == INF else x1

            def reg(lam):
                out = seg.regular(lam) * _weight_regular(lam, p, domain)
                return out * math.cos(t * lam) if osc else out

            v, e = _quad(reg, 0.0, x1, weight="alg", wvar=(ex, 0.0))
            total, err = total + v, err + e
            lo = x1
    if lo < hi:
        def f(lam):
            return float(lam ** power * seg.density(lam) * _weight(lam, p, domain))

        if osc:
            v, e = _quad(f, lo, hi, weight="cos", wvar=t)
        else:
            v, e = _quad(f, lo, hi)
        total, err = total + v, err + e
    return total, err


def _segment_integral(seg, lo, hi, power, p, domain):
    """(int_lo^hi lam^power w(lam) weight(lam) dlam, error); inf on divergence. Not doubled."""
    if _diverges(seg, lo, hi, power, p):
        return INF, 0.0
    if p == 0 or domain is Domain.CONTINUOUS:
        val = _closed_form(seg, lo, hi, power + 2 * p)
        if val is not None:
            return val, 0.0
    return _quadrature(seg, lo, hi, power, p, domain)


def _segment_cos(seg, lo, hi, p, domain, t):
    """(int_lo^hi cos(t lam) w(lam) weight(lam) dlam, error). Not doubled."""
    if t == 0:
        v, e = _segment_integral(seg, lo, hi, 0.0, p, domain)
        return float(v), e
    if seg.form == "constant" and (p == 0):
        return seg.c * (math.sin(hi * t) - math.sin(lo * t)) / t, 0.0
    return _quadrature(seg, lo, hi, 0.0, p, domain, t=t)


def _clipped(rho: SpectralMeasure, lo: float, hi: float):
    for seg in rho.segments:
        a, b = max(seg.a, lo), min(seg.b, hi)
        if a < b:
            yield seg, a, b


def _segments_power(rho: SpectralMeasure, power: float, lo=0.0, hi=INF):
    """Doubled segment integral of lam^power as an mpmath number (inf on divergence)."""
    total, err = mpmath.mpf(0), 0.0
    for seg, a, b in _clipped(rho, lo, hi):
        v, e = _segment_integral(seg, a, b, power, rho.weight_power, rho.domain)
        if v == INF:
            return mpmath.inf, INF
        total += v
        err += e
    return 2 * total, 2 * err


# ---------------------------------------------------------------- public operations

def total_mass(rho: SpectralMeasure) -> float:
    """Sum of atom masses plus twice the integral of every segment."""
    seg_mass, _ = _segments_power(rho, 0.0)
    if seg_mass == mpmath.inf:
        bad = [s.describe() for s in rho.segments
               if _segment_integral(s, s.a, s.b, 0.0, rho.weight_power, rho.domain)[0] == INF]
        raise ValidationError(f"non-integrable segment: {', '.join(bad)}")
    return float(sum(m for _, m in rho.atoms) + seg_mass)


def scale_measure(rho: SpectralMeasure, factor: float) -> SpectralMeasure:
    return replace(rho,
                   atoms=tuple((f, m * factor) for f, m in rho.atoms),
                   segments=tuple(s.with_c(s.c * factor) for s in rho.segments))


def normalize(rho: SpectralMeasure) -> SpectralMeasure:
    m0 = total_mass(rho)
    if not (m0 > 0 and math.isfinite(m0)):
        raise ValidationError(f"cannot normalize a measure of mass {m0!r}")
    return scale_measure(rho, 1.0 / m0)


def _atoms_power(rho: SpectralMeasure, delta: float):
    total = mpmath.mpf(0)
    for f, m in rho.atoms:
        if m == 0:
            continue
        if f == 0:
            if delta < 0:
                return mpmath.inf
            if delta == 0:
                total += m
        else:
            total += mpmath.mpf(m) * mpmath.mpf(f) ** delta
    return total


def moment_is_finite(rho: SpectralMeasure, delta: float) -> bool:
    if delta < 0 and any(f == 0 and m > 0 for f, m in rho.atoms):
        return False
    return not any(_diverges(s, a, b, delta, rho.weight_power) for s, a, b in _clipped(rho, 0.0, INF))


def _moment_mp(rho: SpectralMeasure, delta: float):
    if not moment_is_finite(rho, delta):
        return mpmath.inf, 0.0
    seg, err = _segments_power(rho, float(delta))
    return _atoms_power(rho, float(delta)) + seg, err


def moment(rho: SpectralMeasure, delta: float) -> float:
    """m_delta = int |lam|^delta d rho; ``math.inf`` when divergent."""
    val, _ = _moment_mp(rho, delta)
    return INF if val == mpmath.inf else float(val)


def log_moment(rho: SpectralMeasure, delta: float) -> float:
    """log m_delta without overflow; ``math.inf`` when divergent, ``-inf`` for a zero moment."""
    val, _ = _moment_mp(rho, delta)
    if val == mpmath.inf:
        return INF
    if val <= 0:
        return -INF
    return float(mpmath.log(val))


@dataclass
class MomentTable:
    values: dict
    errors: dict


def moment_table(rho: SpectralMeasure, deltas: Iterable[float]) -> MomentTable:
    values, errors = {}, {}
    for d in deltas:
        v, e = _moment_mp(rho, d)
        values[float(d)] = INF if v == mpmath.inf else float(v)
        errors[float(d)] = float(e)
    return MomentTable(values, errors)


def half_line_mass(rho: SpectralMeasure, x: float) -> float:
    """rho([0, x]): atom at 0 counted fully, atoms in (0, x] at half their pair mass."""
    if x < 0:
        return 0.0
    atoms = sum(m if f == 0 else 0.5 * m for f, m in rho.atoms if f <= x)
    seg, _ = _segments_power(rho, 0.0, 0.0, x)
    return float(atoms + seg / 2)


def sigma_sq(rho: SpectralMeasure, N: float) -> float:
    """Mass of [0, 1/N]."""
    if not N > 0:
        raise ValidationError("N must be positive")
    return half_line_mass(rho, 1.0 / N)


def _covariance_scalar(rho: SpectralMeasure, t: float):
    val = sum(m * math.cos(f * t) for f, m in rho.atoms)
    err = 0.0
    for seg, a, b in _clipped(rho, 0.0, INF):
        v, e = _segment_cos(seg, a, b, rho.weight_power, rho.domain, t)
        if v == INF:
            raise ValidationError(f"{seg.describe()}: non-integrable segment")
        val += 2 * float(v)
        err += 2 * e
    return float(val), err


def covariance(rho: SpectralMeasure, t, with_error: bool = False):
    """r(t) = sum_atoms mass cos(lam t) + 2 int cos(lam t) w(lam) dlam.

    ``t`` may be a scalar or an array. With ``with_error`` the quadrature error
    bound is returned alongside.
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    vals = np.empty(ts.shape)
    errs = np.empty(ts.shape)
    cache = {}
    for idx, tt in np.ndenumerate(ts):
        key = abs(float(tt))
        if key not in cache:
            cache[key] = _covariance_scalar(rho, key)
        vals[idx], errs[idx] = cache[key]
    if np.ndim(t) == 0:
        vals, errs = float(vals[0]), float(errs[0])
    return (vals, errs) if with_error else vals


@dataclass
class IbpReport:
    gamma: float
    bound_coefficient: float
    ratios: list
    max_ratio: float
    passed: bool


def check_ibp(rho: SpectralMeasure, gamma: float, lam_grid: Sequence[float]) -> IbpReport:
    """Check rho([0, lam]) <= (m_{-gamma}/2) lam^gamma on a grid."""
    m = moment(rho, -gamma)
    if m == INF:
        raise InapplicableError(f"m_{-gamma!r} is infinite")
    b = 0.5 * m
    ratios = [half_line_mass(rho, lam) / (b * lam ** gamma) for lam in lam_grid]
    mx = max(ratios) if ratios else 0.0
    return IbpReport(gamma, b, ratios, mx, mx <= 1.0 + 1e-12)


def rescale_to_pi(rho: SpectralMeasure) -> tuple[SpectralMeasure, float]:
    """Pushforward under lam -> lam/q with the smallest q >= 1 putting the support in [0, pi]."""
    if rho.domain is not Domain.CONTINUOUS:
        raise ValidationError("rescale_to_pi applies to continuous-time measures")
    top = rho.support_sup
    if top == INF:
        raise ValidationError("unbounded support cannot be rescaled into [-pi, pi]")
    q = max(1.0, top / math.pi)
    if q == 1.0:
        return rho, 1.0
    out = pushforward(rho, q)
    for g in (-2.0, 2.0):
        before, after = moment(rho, g), moment(out, g)
        if math.isfinite(before) and abs(after - q ** (-g) * before) > 1e-9 * abs(q ** (-g) * before):
            raise ArithmeticError(f"rescaling check failed at gamma={g}")
    return out, q


def pushforward(rho: SpectralMeasure, q: float) -> SpectralMeasure:
    """Image of rho under lam -> lam/q (continuous time)."""
    p = rho.weight_power
    wq = q ** (2 * p)
    segs = []
    for s in rho.segments:
        a, b = s.a / q, (INF if s.b == INF else s.b / q)
        if s.form == "constant":
            segs.append(replace(s, a=a, b=b, c=s.c * q * wq))
        elif s.form == "power":
            segs.append(replace(s, a=a, b=b, c=s.c * q ** (1 + s.alpha) * wq))
        elif s.form == "powertail":
            segs.append(replace(s, a=a, b=b, c=s.c * q ** (1 - s.alpha) * wq))
        elif s.form == "expwell":
            segs.append(replace(s, a=a, b=b, c=s.c * q * wq, scale=s.scale / q))
        else:
            segs.append(replace(s, a=a, b=b, c=s.c * wq, scale=s.scale / q))
    return replace(rho, atoms=tuple((f / q, m) for f, m in rho.atoms), segments=tuple(segs))


def finite_tau(rho: SpectralMeasure, k_max: int) -> float:
    """max_{1<=k<=k_max} m_{-2k+2} / m_{-2k}."""
    best = -INF
    for k in range(1, k_max + 1):
        num, den = moment(rho, -2 * k + 2), moment(rho, -2 * k)
        if num == INF or den == INF:
            raise InapplicableError(f"m_{-2 * k} is infinite")
        best = max(best, num / den)
    return best


@dataclass
class LatticeGap:
    step: float
    lambda_min: float
    B: float
    expected_floor: float
    certified: bool
    floor_ok: bool


def riesz_lattice_gap(rho: SpectralMeasure, J: tuple[float, float], nu: float, n: int) -> LatticeGap:
    """Smallest eigenvalue of the covariance section on the lattice (2 pi/|J|) Z.

    A density floor ``nu`` on ``J`` implies ``lambda_min >= nu |J|``; ``floor_ok``
    records whether the computed section respects that expectation.
    """
    a, b = float(J[0]), float(J[1])
    if not b > a:
        raise ValidationError("J must be a nondegenerate interval")
    if not 1 <= n <= 2000:
        raise ValidationError("matrix size must be in [1, 2000]")
    length = b - a
    step = 2 * math.pi / length
    row = covariance(rho, step * np.arange(n))
    lam_min = float(linalg.eigvalsh(linalg.toeplitz(row), subset_by_index=[0, 0])[0])
    tol = 1e-10 * max(1.0, abs(row[0]))
    certified = lam_min > tol
    floor = nu * length
    return LatticeGap(step, lam_min, math.sqrt(lam_min) if certified else 0.0, floor,
                      certified, lam_min >= floor * (1 - 1e-9) - tol)


# ---------------------------------------------------------------- calculus

def derivative_measure(rho: SpectralMeasure) -> SpectralMeasure:
    """Spectral measure of f' (continuous) or of the forward difference (integer)."""
    if rho.domain is Domain.CONTINUOUS:
        if not moment_is_finite(rho, 2.0 + 1e-9):
            raise InapplicableError("derivative needs m_delta < inf for some delta > 2")
        atoms = tuple((f, m * f * f) for f, m in rho.atoms)
    else:
        atoms = tuple((f, m * 4.0 * math.sin(f / 2) ** 2) for f, m in rho.atoms)
    return replace(rho, atoms=atoms, weight_power=rho.weight_power + 1)


def antiderivative_measure(rho: SpectralMeasure) -> SpectralMeasure:
    """Spectral measure of the anti-derivative (continuous) or cumulative sum (integer)."""
    if not moment_is_finite(rho, -2.0):
        raise InapplicableError("anti-derivative needs m_{-2} < inf")
    delta = rho.moment_delta if rho.moment_delta is not None else 1e-9
    if not moment_is_finite(rho, delta):
        raise InapplicableError("anti-derivative needs a finite positive moment")
    if rho.domain is Domain.CONTINUOUS:
        atoms = tuple((f, m / (f * f)) for f, m in rho.atoms if m > 0)
    else:
        atoms = tuple((f, m / (4.0 * math.sin(f / 2) ** 2)) for f, m in rho.atoms if m > 0)
    return replace(rho, atoms=atoms, weight_power=rho.weight_power - 1)


# ---------------------------------------------------------------- configuration

def _parse_bound(x) -> float:
    if isinstance(x, str):
        if x.strip().lower() in ("inf", "+inf", "infinity"):
            return INF
        raise ValidationError(f"bad support endpoint {x!r}")
    return float(x)


def segment_from_config(entry: dict) -> DensitySegment:
    try:
        form = str(entry["form"]).lower()
        a, b = entry["support"]
        params = dict(entry.get("params", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed segment entry {entry!r}: {exc}") from None
    if form not in FORM_PARAMS:
        raise ValidationError(f"unknown segment form {form!r}")
    unknown = set(params) - set(FORM_PARAMS[form])
    if unknown or "c" not in params:
        raise ValidationError(f"segment {form}: bad params {sorted(params)}")
    if form in ("power", "powertail") and "alpha" not in params:
        raise ValidationError(f"segment {form}: missing alpha")
    return DensitySegment(form, float(a), _parse_bound(b), **{k: float(v) for k, v in params.items()})


def measure_from_config(cfg: dict) -> SpectralMeasure:
    """Build and validate a measure from its declarative description."""
    if not isinstance(cfg, dict):
        raise ValidationError("measure config must be a mapping")
    version = cfg.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ValidationError(f"unsupported schema_version {version!r}")
    try:
        atoms = tuple((float(f), float(m)) for f, m in cfg.get("atoms", []))
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"malformed atoms: {exc}") from None
    segments = tuple(segment_from_config(s) for s in cfg.get("segments", []))
    delta = cfg.get("moment_delta")
    rho = SpectralMeasure(Domain.parse(cfg.get("domain", "integer")), atoms, segments,
                          int(cfg.get("weight_power", 0)),
                          None if delta is None else float(delta))
    rho.validate()
    if cfg.get("normalize", False):
        rho = normalize(rho)
    return rho


def measure_to_config(rho: SpectralMeasure) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "domain": rho.domain.value,
        "atoms": [[f, m] for f, m in rho.atoms],
        "segments": [s.to_config() for s in rho.segments],
        "normalize": False,
    }
    if rho.weight_power:
        out["weight_power"] = rho.weight_power
    if rho.moment_delta is not None:
        out["moment_delta"] = rho.moment_delta
    return out


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def measure_digest(rho: SpectralMeasure) -> str:
    return hashlib.sha256(canonical_json(measure_to_config(rho)).encode()).hexdigest()[:16]
