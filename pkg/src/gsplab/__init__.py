"""Persistence probabilities of Gaussian stationary processes from their spectral measures."""
from .errors import CovarianceInvalidError, GSPError, InapplicableError, ValidationError
from .rng import RngSpec
from .spectral import DensitySegment, Domain, SpectralMeasure

__all__ = [
    "CovarianceInvalidError", "GSPError", "InapplicableError", "ValidationError",
    "RngSpec", "DensitySegment", "Domain", "SpectralMeasure",
]
__version__ = "0.1.0"
