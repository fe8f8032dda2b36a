import numpy as np
import pytest

from qreset.params import CircuitParams


@pytest.fixture(scope="session")
def params():
    return CircuitParams.defaults()


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


def random_hermitian(rng, n=4):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return (a + a.conj().T) / 2.0


def random_density(rng, n=4):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


def random_controls(rng):
    """A random valid control triple in the device band."""
    wq, wR, wL = rng.uniform(2 * np.pi * 8e9, 2 * np.pi * 13e9, 3)
    return (wq, wR, wL)
