import numpy as np
import pytest

from changediag import models


@pytest.fixture(scope="session")
def scalar_model():
    """Scalar Gaussian: pre-change N(0,1), one alternative N(1,1)."""
    return models.gaussian_mean_shift([1.0])


@pytest.fixture(scope="session")
def two_theta_model():
    return models.gaussian_mean_shift([1.0, 2.0])


@pytest.fixture(scope="session")
def single_fault_model():
    return models.multichannel(
        2,
        [models.gaussian_density(0.0), models.gaussian_density(0.0)],
        [models.gaussian_density(1.0), models.gaussian_density(1.0)],
    )


@pytest.fixture(scope="session")
def simultaneous_model():
    return models.multichannel(
        2,
        [models.gaussian_density(0.0), models.gaussian_density(0.0)],
        [models.gaussian_density(1.0), models.gaussian_density(1.0)],
        simultaneous=True,
    )


def random_llr_paths(rng, num_paths, length, num_alternatives, scale=1.0):
    """Batch of synthetic log-likelihood-ratio paths for statistic tests."""
    return rng.normal(scale=scale, size=(num_paths, length, num_alternatives))


def cusum_expected_stop(b, drift, n=3000):
    """Independent oracle: exact expected stopping time of a CuSum driven by
    N(drift, 1) increments with threshold b, from the renewal integral
    equation solved by Nystrom quadrature (Gauss-Legendre).

    With drift -0.5 this is the no-change expected alarm time of the scalar
    Gaussian benchmark's single CuSum; with drift +0.5 its expected delay
    when the change is active from the start.
    """
    from scipy.stats import norm

    x, w = np.polynomial.legendre.leggauss(n)
    z = 0.5 * b * (x + 1.0)
    wz = 0.5 * b * w
    A = np.zeros((n + 1, n + 1))
    rhs = np.ones(n + 1)
    A[:n, :n] = np.eye(n) - norm.pdf(z[None, :] - z[:, None] - drift) * wz[None, :]
    A[:n, n] = -norm.cdf(-z - drift)
    A[n, :n] = -norm.pdf(z - drift) * wz
    A[n, n] = 1.0 - norm.cdf(-drift)
    return float(np.linalg.solve(A, rhs)[n])
