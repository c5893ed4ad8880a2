import io
import math

import numpy as np
import pytest

from gsplab import catalog
from gsplab.errors import CovarianceInvalidError, ValidationError
from gsplab.sampler import (PathGrid, circulant_paths, cov_matrix, discrete_diff, exact_paths,
                            paths_from_binary, paths_to_binary, paths_to_csv, sample_circulant,
                            sample_exact, sample_spectral, spectral_model_covariance, spectral_modes)
from gsplab.spectral import Domain, covariance, total_mass

INT_GRID = PathGrid(Domain.INTEGER, 1, 1, 16)


def test_grid_validation():
    assert np.array_equal(PathGrid("integer", 0, 1, 3).times, [0, 1, 2])
    with pytest.raises(ValidationError):
        PathGrid(Domain.INTEGER, 0, 0.5, 3)
    with pytest.raises(ValidationError):
        PathGrid(Domain.CONTINUOUS, 0, 0.1, 0)


def test_cov_matrix_is_toeplitz_of_covariance():
    sigma = cov_matrix(catalog.atoms((1.0, 1.0)), PathGrid(Domain.CONTINUOUS, 0, 0.5, 5))
    t = 0.5 * np.arange(5)
    assert np.allclose(sigma, np.cos(np.subtract.outer(t, t)))


def _empirical_cov(paths):
    return paths.T @ paths / paths.shape[0]


@pytest.mark.parametrize("rho", [catalog.uniform(), catalog.power(-0.5), catalog.gap()])
def test_exact_and_circulant_match_covariance(rho):
    target = cov_matrix(rho, INT_GRID)
    n = 40_000
    for paths in (exact_paths(rho, INT_GRID, n, 1), circulant_paths(rho, INT_GRID, n, 2).paths):
        assert paths.shape == (n, 16)
        # sample covariance entries have sd <= sqrt(2/n) for unit variances
        assert np.max(np.abs(_empirical_cov(paths) - target)) < 6 * math.sqrt(2 / n)


def test_circulant_fallback_on_negative_spectrum():
    # a cosine covariance is PSD, but its period does not fit the embedding
    rho = catalog.atoms((0.5, 1.0))
    grid = PathGrid(Domain.CONTINUOUS, 1.0, 1.0, 16)
    res = circulant_paths(rho, grid, 20_000, 0)
    assert res.fallback and res.min_eigenvalue < 0
    assert np.max(np.abs(_empirical_cov(res.paths) - cov_matrix(rho, grid))) < 6 * math.sqrt(2 / 20_000)


def test_indefinite_covariance_rejected():
    acov = np.zeros(17)
    acov[0], acov[1] = 1.0, 0.9
    with pytest.raises(CovarianceInvalidError):
        circulant_paths(catalog.uniform(), INT_GRID, 10, 0, acov=acov)


def test_sampling_reproducible_and_thread_independent():
    rho = catalog.power(1.0)
    a = exact_paths(rho, INT_GRID, 3000, 5, workers=1)
    b = exact_paths(rho, INT_GRID, 3000, 5, workers=4)
    assert np.array_equal(a, b)
    c = circulant_paths(rho, INT_GRID, 3000, 5, workers=1).paths
    d = circulant_paths(rho, INT_GRID, 3000, 5, workers=3).paths
    assert np.array_equal(c, d)


def test_spectral_modes_mass_and_model_covariance():
    rho = catalog.atoms_plus_density()
    modes = spectral_modes(rho, 400)
    assert modes.masses.sum() == pytest.approx(total_mass(rho), rel=1e-10)
    t = np.arange(6.0)
    assert np.max(np.abs(spectral_model_covariance(modes, t) - covariance(rho, t))) < 0.02


def test_sample_wrappers_carry_provenance():
    rho = catalog.uniform()
    paths = sample_exact(rho, INT_GRID, 3, 9)
    assert [p.provenance["path_id"] for p in paths] == [0, 1, 2]
    assert paths[0].provenance["seed"] == 9
    circ = sample_circulant(rho, INT_GRID, 2, 9)
    assert circ[0].provenance["method"] == "circulant"
    spec = sample_spectral(rho, INT_GRID, 64, 2, 9)
    assert spec[0].provenance["covariance_bias_bound"] > 0


def test_discrete_diff():
    path = sample_exact(catalog.uniform(), INT_GRID, 1, 0)[0]
    d2 = discrete_diff(path, 2)
    v = path.values
    assert np.allclose(d2.values, v[2:] - 2 * v[1:-1] + v[:-2])
    assert d2.grid.count == 14
    with pytest.raises(ValidationError):
        discrete_diff(path, 16)


def test_binary_round_trip_and_csv():
    grid = PathGrid(Domain.CONTINUOUS, 0.25, 0.25, 8)
    paths = sample_exact(catalog.gap(Domain.CONTINUOUS), grid, 4, 3)
    buf = io.BytesIO()
    paths_to_binary(paths, buf)
    buf.seek(0)
    g, data = paths_from_binary(buf)
    assert g == grid
    assert np.array_equal(data, np.vstack([p.values for p in paths]))
    text = io.StringIO()
    paths_to_csv(paths, text)
    lines = text.getvalue().splitlines()
    assert lines[0] == "t,value,path_id" and len(lines) == 1 + 32
    t, v, pid = lines[1].split(",")
    assert float(t) == 0.25 and float(v) == paths[0].values[0] and pid == "0"
    bad = io.BytesIO(b"XXXX" + bytes(40))
    with pytest.raises(ValidationError):
        paths_from_binary(bad)
