import math

import numpy as np
import pytest

from torus_kam.diophantine import DioParams
from torus_kam.mhd import PhysParams, default_forcing
from torus_kam.spectral import Lattice, StatePair, TorusField

GOLDEN = (1.0, (1.0 + math.sqrt(5.0)) / 2.0)
# fixed generic diophantine frequency used across the suite
OMEGA = (1.6250954666046669, 1.8972138009695754)


def smooth_field(lat, rng, amp=0.3, kmax=4, decay=1.0) -> TorusField:
    f = TorusField.zeros(lat, True)
    n = lat.n_max
    kmax = min(kmax, n)
    for k1 in range(-kmax, kmax + 1):
        for k2 in range(-kmax, kmax + 1):
            if (k1, k2) == (0, 0):
                continue
            c = (rng.standard_normal() + 1j * rng.standard_normal()) \
                * amp * math.exp(-decay * math.hypot(k1, k2))
            f.coeffs[k1 + n, k2 + n] += c
            f.coeffs[-k1 + n, -k2 + n] += np.conj(c)
    return f


def smooth_state(lat, rng, amp=0.3, kmax=4) -> StatePair:
    return StatePair(smooth_field(lat, rng, amp, kmax),
                     smooth_field(lat, rng, amp, kmax))


def random_field(lat, rng, n_modes=50) -> TorusField:
    """Real field with n_modes random conjugate mode pairs anywhere on the lattice."""
    f = TorusField.zeros(lat, True)
    n = lat.n_max
    for _ in range(n_modes):
        k1 = int(rng.integers(-n, n + 1))
        k2 = int(rng.integers(-n, n + 1))
        if (k1, k2) == (0, 0):
            continue
        c = rng.standard_normal() + 1j * rng.standard_normal()
        f.coeffs[k1 + n, k2 + n] += c
        f.coeffs[-k1 + n, -k2 + n] += np.conj(c)
    return f


@pytest.fixture(scope="session")
def lat16():
    return Lattice(16)


@pytest.fixture(scope="session")
def lat8():
    return Lattice(8)


@pytest.fixture(scope="session")
def phys():
    return PhysParams(lam=1000.0, eta=0.02)


@pytest.fixture(scope="session")
def forcing16(phys, lat16):
    return default_forcing(phys, lat16)


@pytest.fixture(scope="session")
def dio():
    return DioParams(gamma=0.1, tau=2.0, k_check=64)
