"""Persistence probabilities P(f > 0 on (0, N]) for a process given by its spectral measure.

Over the integers the event involves the N points 1..N, so only lags 0..N-1 of
the covariance enter. Continuous time is handled on a uniform grid that ends at
N; the grid event is implied by the continuous one, so grid estimates are biased
upward and the bias is studied with ``grid_refinement_study``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import GSPError, ValidationError
from .orthant import PersistenceEstimate, exact_orthant_small, genz_orthant
from .rng import as_rng
from .sampler import PathGrid, circulant_paths
from .spectral import Domain, SpectralMeasure, covariance

EXACT_MAX_DIM = 7
METHODS = ("auto", "exact", "orthant", "path")
CURVE_COLUMNS = ("N", "log_p", "se_log", "method", "grid_step", "n_samples", "seed")


def _orthant_estimate(sigma, method, n_samples, rng, workers, max_dim):
    d = sigma.shape[0]
    if method == "auto":
        method = "exact" if d <= EXACT_MAX_DIM else "orthant"
    if method == "exact":
        return exact_orthant_small(sigma)
    if method == "orthant":
        return genz_orthant(sigma, n_samples, rng, workers, max_dim=max_dim)
    raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")


def _path_estimate(rho, grid, n_samples, rng, workers) -> PersistenceEstimate:
    res = circulant_paths(rho, grid, n_samples, rng, workers)
    hits = int(np.count_nonzero(np.all(res.paths > 0, axis=1)))
    if hits == 0:
        return PersistenceEstimate(-math.inf, math.inf, "PathMC", n_samples,
                                   low_confidence=True, extra={"hits": 0, "fallback": res.fallback})
    p = hits / n_samples
    se_log = math.sqrt((1 - p) / (p * n_samples))
    return PersistenceEstimate(math.log(p), se_log, "PathMC", n_samples, low_confidence=se_log > 1,
                               extra={"hits": hits, "fallback": res.fallback})


def _estimate(rho, lags, grid, method, n_samples, rng, workers, max_dim):
    if method == "path":
        return _path_estimate(rho, grid, n_samples, rng, workers)
    sigma = linalg.toeplitz(covariance(rho, lags))
    return _orthant_estimate(sigma, method, n_samples, rng, workers, max_dim)


def persistence_integer(rho: SpectralMeasure, N: int, n_samples: int = 100_000, rng=None,
                        method: str = "auto", workers: int = 1, max_dim: int = 512) -> PersistenceEstimate:
    """Estimate P(f(1) > 0, ..., f(N) > 0) for an integer-time process.

    ``method`` is ``exact`` (N <= 7), ``orthant`` (sequential conditioning),
    ``path`` (naive path counting) or ``auto`` (exact when possible).
    """
    if rho.domain is not Domain.INTEGER:
        raise ValidationError("persistence_integer needs an integer-time measure")
    if int(N) != N or N < 1:
        raise ValidationError("N must be a positive integer")
    N = int(N)
    rng = as_rng(rng)
    grid = PathGrid(Domain.INTEGER, 1, 1, N)
    return _estimate(rho, np.arange(N, dtype=float), grid, method, n_samples, rng, workers, max_dim)


def continuous_grid(N: float, h: float) -> PathGrid:
    """Uniform grid of ceil(N/h) points on (0, N] ending at N."""
    if not (N > 0 and h > 0):
        raise ValidationError("N and h must be positive")
    # guard against N/h landing a hair above an integer
    n = max(1, math.ceil(N / h - 1e-9))
    step = N / n
    return PathGrid(Domain.CONTINUOUS, step, step, n)


def persistence_continuous(rho: SpectralMeasure, N: float, h: float, n_samples: int = 100_000,
                           rng=None, method: str = "auto", workers: int = 1,
                           max_dim: int = 512) -> PersistenceEstimate:
    if rho.domain is not Domain.CONTINUOUS:
        raise ValidationError("persistence_continuous needs a continuous-time measure")
    rng = as_rng(rng)
    grid = continuous_grid(N, h)
    est = _estimate(rho, grid.step * np.arange(grid.count), grid, method, n_samples, rng,
                    workers, max_dim)
    est.grid_step = grid.step
    return est


@dataclass
class CurvePoint:
    N: float
    estimate: PersistenceEstimate | None
    error: str | None = None

    @property
    def is_gap(self) -> bool:
        return self.estimate is None


@dataclass
class CurveParams:
    n_samples: int = 100_000
    h: float | None = None
    workers: int = 1
    max_dim: int = 512
    extra: dict = field(default_factory=dict)


def _curve_method(rho, N_list, method, h):
    if method != "auto":
        return method
    if rho.domain is Domain.INTEGER:
        dims = [int(N) for N in N_list]
    else:
        dims = [continuous_grid(N, h).count for N in N_list]
    return "exact" if max(dims) <= EXACT_MAX_DIM else "orthant"


def persistence_curve(rho: SpectralMeasure, N_list, method: str = "auto",
                      params: CurveParams | None = None, rng=None) -> list[CurvePoint]:
    """One estimate per N with a single method; failed points become gap markers."""
    params = params or CurveParams()
    N_list = list(N_list)
    if not N_list:
        raise ValidationError("N_list is empty")
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValidationError("N_list must be strictly increasing")
    if rho.domain is Domain.CONTINUOUS and params.h is None:
        raise ValidationError("continuous-time curves need a grid step h")
    rng = as_rng(rng)
    method = _curve_method(rho, N_list, method, params.h)
    points = []
    for N in N_list:
        try:
            if rho.domain is Domain.INTEGER:
                est = persistence_integer(rho, N, params.n_samples, rng, method, params.workers,
                                          params.max_dim)
            else:
                est = persistence_continuous(rho, N, params.h, params.n_samples, rng, method,
                                             params.workers, params.max_dim)
            points.append(CurvePoint(N, est))
        except GSPError as exc:
            points.append(CurvePoint(N, None, str(exc)))
    return points


def curve_rows(points: list[CurvePoint], seed: int) -> list[dict]:
    rows = []
    for pt in points:
        if pt.is_gap:
            rows.append({"N": pt.N, "log_p": "", "se_log": "", "method": "gap", "grid_step": "",
                         "n_samples": "", "seed": seed})
            continue
        e = pt.estimate
        rows.append({"N": pt.N, "log_p": repr(e.log_p), "se_log": repr(e.se_log), "method": e.method,
                     "grid_step": e.grid_step if isinstance(e.grid_step, str) else repr(e.grid_step),
                     "n_samples": e.n_samples, "seed": seed})
    return rows


def curve_to_csv(points: list[CurvePoint], fh, seed: int) -> None:
    writer = csv.DictWriter(fh, fieldnames=CURVE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(curve_rows(points, seed))


@dataclass
class RefinementRow:
    h: float
    grid_step: float
    dim: int
    estimate: PersistenceEstimate


@dataclass
class RefinementTable:
    rows: list[RefinementRow]
    extrapolated_log_p: float | None
    slope: float | None
    extrapolated_se: float | None


def grid_refinement_study(rho: SpectralMeasure, N: float, h_list, n_samples: int = 100_000,
                          rng=None, method: str = "auto", workers: int = 1) -> RefinementTable:
    """Estimates for each h (coarse to fine) plus a linear-in-step extrapolation to step 0.

    The extrapolation uses the two finest grids: with log_p modelled as a + b * step,
    it returns a and the slope b.
    """
    if not h_list:
        raise ValidationError("h_list is empty")
    rng = as_rng(rng)
    rows = []
    for h in sorted(set(h_list), reverse=True):
        est = persistence_continuous(rho, N, h, n_samples, rng, method, workers)
        grid = continuous_grid(N, h)
        rows.append(RefinementRow(h, grid.step, grid.count, est))
    if len(rows) < 2:
        return RefinementTable(rows, None, None, None)
    coarse, fine = rows[-2], rows[-1]
    if coarse.grid_step == fine.grid_step:
        return RefinementTable(rows, fine.estimate.log_p, 0.0, fine.estimate.se_log)
    slope = (coarse.estimate.log_p - fine.estimate.log_p) / (coarse.grid_step - fine.grid_step)
    extrapolated = fine.estimate.log_p - slope * fine.grid_step
    w = fine.grid_step / (coarse.grid_step - fine.grid_step)
    se = math.hypot((1 + w) * fine.estimate.se_log, w * coarse.estimate.se_log)
    return RefinementTable(rows, extrapolated, slope, se)
