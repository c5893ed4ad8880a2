"""Sampling stationary Gaussian paths on uniform grids.

Three samplers are provided: an exact factorization of the Toeplitz covariance,
circulant embedding (exact whenever the embedding spectrum is nonnegative), and
a random-phase spectral sum over equal-mass cells.

Paths are produced in fixed blocks of ``BLOCK`` paths; block ``j`` draws from its
own counter-based stream, so output does not depend on the number of workers.
"""
from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .errors import CovarianceInvalidError, ValidationError
from .rng import RngSpec, as_rng, ordered_map
from .spectral import (INF, Domain, SpectralMeasure, _segments_power, antiderivative_measure,
                       covariance, derivative_measure,
                       measure_digest)

BLOCK = 1024
PSD_TOL = 1e-10
MAGIC = b"GSPP"
BINARY_VERSION = 1
_HEADER = struct.Struct("<4sHBBddQQ")


@dataclass(frozen=True)
class PathGrid:
    domain: Domain
    start: float
    step: float
    count: int

    def __post_init__(self):
        object.__setattr__(self, "domain", Domain.parse(self.domain))
        if self.count < 1:
            raise ValidationError("grid count must be >= 1")
        if not self.step > 0:
            raise ValidationError("grid step must be positive")
        if self.domain is Domain.INTEGER and (self.step != 1 or float(self.start) != int(self.start)):
            raise ValidationError("integer-time grids have step 1 and integer start")

    @property
    def times(self) -> np.ndarray:
        return self.start + self.step * np.arange(self.count)


@dataclass
class SamplePath:
    grid: PathGrid
    values: np.ndarray
    provenance: dict = field(default_factory=dict)


def cov_matrix(rho: SpectralMeasure, grid: PathGrid) -> np.ndarray:
    if grid.count > 4000:
        raise ValidationError("cov_matrix supports at most 4000 grid points")
    return linalg.toeplitz(covariance(rho, grid.step * np.arange(grid.count)))


def psd_factor(sigma: np.ndarray) -> np.ndarray:
    """F with F F^T = sigma; eigenvalues in [-1e-10, 0] are clipped, anything lower is an error."""
    w, v = linalg.eigh(sigma)
    scale = max(1.0, float(np.max(np.abs(np.diag(sigma)))))
    if w[0] < -PSD_TOL * scale:
        raise CovarianceInvalidError(f"covariance has eigenvalue {w[0]:.3e} < -1e-10")
    return v * np.sqrt(np.clip(w, 0.0, None))


def _blocks(n_paths: int):
    return [(j, min(BLOCK, n_paths - j * BLOCK)) for j in range(math.ceil(n_paths / BLOCK))]


def exact_paths_from_factor(factor: np.ndarray, n_paths: int, rng, tag="exact", workers=1) -> np.ndarray:
    rng = as_rng(rng)
    d = factor.shape[0]

    def block(spec):
        j, m = spec
        z = rng.generator(tag, j).standard_normal((m, factor.shape[1]))
        return z @ factor.T

    parts = ordered_map(block, _blocks(n_paths), workers)
    return np.vstack(parts) if parts else np.empty((0, d))


def exact_paths(rho, grid, n_paths, rng=None, workers=1) -> np.ndarray:
    """Array of shape (n_paths, grid.count) with exactly the Toeplitz covariance."""
    if grid.count > 2000:
        raise ValidationError("exact sampling supports at most 2000 grid points")
    return exact_paths_from_factor(psd_factor(cov_matrix(rho, grid)), n_paths, rng, workers=workers)


def _embedding_size(count: int) -> int:
    m = 2
    while m < 2 * count:
        m *= 2
    return m


def circulant_spectrum(acov: np.ndarray) -> np.ndarray:
    """Eigenvalues of the circulant embedding of acov[0..m/2]."""
    first_row = np.concatenate([acov, acov[-2:0:-1]])
    return np.fft.fft(first_row).real


@dataclass
class CirculantResult:
    paths: np.ndarray
    fallback: bool
    min_eigenvalue: float


def circulant_paths(rho, grid, n_paths, rng=None, workers=1, acov=None) -> CirculantResult:
    """Circulant-embedding sampler; falls back to exact sampling on a negative spectrum.

    ``acov`` optionally overrides the autocovariance sequence (lags 0..m/2).
    """
    rng = as_rng(rng)
    m = _embedding_size(grid.count)
    if acov is None:
        acov = covariance(rho, grid.step * np.arange(m // 2 + 1))
    acov = np.asarray(acov, dtype=float)
    if acov.shape[0] < m // 2 + 1:
        raise ValidationError(f"need {m // 2 + 1} covariance lags for the embedding")
    acov = acov[: m // 2 + 1]
    eig = circulant_spectrum(acov)
    min_eig = float(eig.min())
    if min_eig < -PSD_TOL * max(1.0, abs(acov[0])):
        try:
            factor = psd_factor(linalg.toeplitz(acov[: grid.count]))
        except CovarianceInvalidError as exc:
            raise CovarianceInvalidError(f"circulant embedding and exact sampling both failed: {exc}")
        return CirculantResult(exact_paths_from_factor(factor, n_paths, rng, "circulant-fallback", workers),
                               True, min_eig)
    amp = np.sqrt(np.clip(eig, 0.0, None) / m)
    count = grid.count

    def block(spec):
        j, size = spec
        gen = rng.generator("circulant", j)
        pairs = (size + 1) // 2
        z = gen.standard_normal((pairs, m)) + 1j * gen.standard_normal((pairs, m))
        w = np.fft.fft(amp * z, axis=1)[:, :count]
        out = np.empty((2 * pairs, count))
        out[0::2] = w.real
        out[1::2] = w.imag
        return out[:size]

    parts = ordered_map(block, _blocks(n_paths), workers)
    paths = np.vstack(parts) if parts else np.empty((0, count))
    return CirculantResult(paths, False, min_eig)


# ---------------------------------------------------------------- spectral sums

@dataclass
class SpectralModes:
    freqs: np.ndarray
    masses: np.ndarray
    half_widths: np.ndarray


def _continuous_cdf(rho, x):
    val, _ = _segments_power(rho, 0.0, 0.0, x)
    return float(val)


def spectral_modes(rho: SpectralMeasure, n_modes: int) -> SpectralModes:
    """Atoms as their own modes plus an equal-mass partition of the density part.

    Each density cell is represented by its mass-median frequency.
    """
    if n_modes < 1:
        raise ValidationError("n_modes must be >= 1")
    freqs = [f for f, m in rho.atoms if m > 0]
    masses = [m for f, m in rho.atoms if m > 0]
    widths = [0.0] * len(freqs)
    if rho.segments:
        total = _continuous_cdf(rho, INF)
        lo_sup = rho.segments[0].a
        hi_sup = rho.segments[-1].b

        def quantile(level):
            if level <= 0:
                return lo_sup
            if level >= total:
                return hi_sup
            top = hi_sup
            if top == INF:
                top = max(2.0 * lo_sup, 1.0)
                while _continuous_cdf(rho, top) < level:
                    top *= 2.0
            return optimize.brentq(lambda x: _continuous_cdf(rho, x) - level, lo_sup, top,
                                   xtol=1e-13, rtol=1e-15)

        edges = [quantile(total * j / n_modes) for j in range(n_modes + 1)]
        for j in range(n_modes):
            mid = quantile(total * (j + 0.5) / n_modes)
            freqs.append(mid)
            masses.append(total / n_modes)
            widths.append(max(mid - edges[j], edges[j + 1] - mid))
    return SpectralModes(np.array(freqs), np.array(masses), np.array(widths))


def spectral_bias_bound(modes: SpectralModes, t: float) -> float:
    """Bound on |r(t) - r_model(t)| from the cell widths (partition modulus)."""
    return float(np.sum(modes.masses * np.minimum(2.0, abs(t) * modes.half_widths)))


def spectral_model_covariance(modes: SpectralModes, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.cos(np.multiply.outer(t, modes.freqs)) @ modes.masses


def spectral_paths(rho, grid, n_modes, n_paths, rng=None, workers=1):
    rng = as_rng(rng)
    modes = spectral_modes(rho, n_modes)
    phase = np.multiply.outer(modes.freqs, grid.times)
    amp = np.sqrt(modes.masses)[:, None]
    cos_part, sin_part = amp * np.cos(phase), amp * np.sin(phase)

    def block(spec):
        j, size = spec
        gen = rng.generator("spectral", j)
        xi = gen.standard_normal((size, modes.freqs.size))
        eta = gen.standard_normal((size, modes.freqs.size))
        return xi @ cos_part + eta @ sin_part

    parts = ordered_map(block, _blocks(n_paths), workers)
    paths = np.vstack(parts) if parts else np.empty((0, grid.count))
    return paths, modes


# ---------------------------------------------------------------- list-of-path wrappers

def _wrap(paths, grid, method, rng, rho, **extra):
    rng = as_rng(rng)
    prov = {"method": method, "seed": rng.seed, "measure_digest": measure_digest(rho), **extra}
    return [SamplePath(grid, row.copy(), dict(prov, path_id=i)) for i, row in enumerate(paths)]


def sample_exact(rho, grid, n_paths, rng=None, workers=1) -> list[SamplePath]:
    return _wrap(exact_paths(rho, grid, n_paths, rng, workers), grid, "exact", rng, rho)


def sample_circulant(rho, grid, n_paths, rng=None, workers=1, acov=None) -> list[SamplePath]:
    res = circulant_paths(rho, grid, n_paths, rng, workers, acov)
    method = "circulant->exact" if res.fallback else "circulant"
    return _wrap(res.paths, grid, method, rng, rho, fallback=res.fallback,
                 min_circulant_eigenvalue=res.min_eigenvalue)


def sample_spectral(rho, grid, n_modes, n_paths=1, rng=None, workers=1) -> list[SamplePath]:
    paths, modes = spectral_paths(rho, grid, n_modes, n_paths, rng, workers)
    span = grid.step * (grid.count - 1)
    return _wrap(paths, grid, "spectral", rng, rho, n_modes=n_modes,
                 covariance_bias_bound=spectral_bias_bound(modes, span))


def discrete_diff(path: SamplePath, k: int) -> SamplePath:
    """k-fold forward difference."""
    if path.grid.domain is not Domain.INTEGER:
        raise ValidationError("discrete differences apply to integer-time paths")
    if k < 1 or path.grid.count <= k:
        raise ValidationError("need 1 <= k < count")
    grid = PathGrid(Domain.INTEGER, path.grid.start, 1.0, path.grid.count - k)
    return SamplePath(grid, np.diff(path.values, n=k), dict(path.provenance, diff_order=k))


# ---------------------------------------------------------------- export

def paths_to_csv(paths: list[SamplePath], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "value", "path_id"])
    for i, p in enumerate(paths):
        pid = p.provenance.get("path_id", i)
        for t, v in zip(p.grid.times, p.values):
            writer.writerow([repr(float(t)), repr(float(v)), pid])


def paths_to_binary(paths: list[SamplePath], fh) -> None:
    """Header ``<4sHBBddQQ``: magic, version, domain (0 int / 1 cont), reserved,
    start, step, count, n_paths; then little-endian float64 values, row-major."""
    if not paths:
        raise ValidationError("no paths to write")
    grid = paths[0].grid
    dom = 0 if grid.domain is Domain.INTEGER else 1
    fh.write(_HEADER.pack(MAGIC, BINARY_VERSION, dom, 0, float(grid.start), float(grid.step),
                          grid.count, len(paths)))
    fh.write(np.ascontiguousarray(np.vstack([p.values for p in paths]), dtype="<f8").tobytes())


def paths_from_binary(fh) -> tuple[PathGrid, np.ndarray]:
    head = fh.read(_HEADER.size)
    magic, version, dom, _, start, step, count, n = _HEADER.unpack(head)
    if magic != MAGIC or version != BINARY_VERSION:
        raise ValidationError("not a GSPP version-1 file")
    grid = PathGrid(Domain.INTEGER if dom == 0 else Domain.CONTINUOUS, start, step, count)
    data = np.frombuffer(fh.read(8 * count * n), dtype="<f8").reshape(n, count)
    return grid, data
