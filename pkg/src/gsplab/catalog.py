"""Canonical measures used across tests, examples and the ``verify`` command."""
from __future__ import annotations

import math

from .spectral import DensitySegment, Domain, SpectralMeasure, normalize


def uniform(domain=Domain.INTEGER) -> SpectralMeasure:
    """Density 1/(2 pi) on [-pi, pi]: iid over Z, the sinc kernel over R."""
    return SpectralMeasure(domain, segments=(DensitySegment("constant", 0.0, math.pi, 1 / (2 * math.pi)),),
                           moment_delta=2.0)


def gap(domain=Domain.INTEGER, lo: float = 1.0, hi: float = 2.0) -> SpectralMeasure:
    """Normalized constant density on +-[lo, hi]."""
    return SpectralMeasure(domain, segments=(DensitySegment("constant", lo, hi, 0.5 / (hi - lo)),),
                           moment_delta=2.0)


def power(alpha: float, domain=Domain.INTEGER, top: float = math.pi) -> SpectralMeasure:
    """Normalized c |lam|^alpha on [-top, top]."""
    raw = SpectralMeasure(domain, segments=(DensitySegment("power", 0.0, top, 1.0, alpha=alpha),),
                          moment_delta=2.0)
    return normalize(raw)


def atoms(*pairs, domain=Domain.CONTINUOUS) -> SpectralMeasure:
    return SpectralMeasure(domain, atoms=tuple(pairs), moment_delta=2.0)


def atoms_plus_density(domain=Domain.INTEGER) -> SpectralMeasure:
    """Atom pair at +-1 with mass 0.3 plus a flat density of mass 0.7 on [-pi, pi]."""
    return SpectralMeasure(domain, atoms=((1.0, 0.3),),
                           segments=(DensitySegment("constant", 0.0, math.pi, 0.7 / (2 * math.pi)),),
                           moment_delta=2.0)


def expwell(A: float = 1.0, domain=Domain.CONTINUOUS) -> SpectralMeasure:
    """Normalized exp(-|lam|^-A) on [-1, 1]."""
    raw = SpectralMeasure(domain, segments=(DensitySegment("expwell", 0.0, 1.0, 1.0, A=A),),
                          moment_delta=2.0)
    return normalize(raw)
