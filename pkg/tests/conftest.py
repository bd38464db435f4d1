import numpy as np
import pytest
from flint import acb
from hypothesis import HealthCheck, settings

from qddlab import hpmath as hm

settings.register_profile(
    "qddlab",
    deadline=None,
    max_examples=30,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("qddlab")


def random_hermitian(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def random_density_matrix(rng, mixed=True):
    """Random qubit state from a Bloch vector inside (or on) the unit ball."""
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    if mixed:
        v *= rng.random() ** (1 / 3)
    return bloch_to_rho(v)


def bloch_to_rho(v):
    x, y, z = (hm.hp(float(c)) for c in v)
    half = hm.hp("0.5")
    return hm.from_entries([
        [acb(half * (1 + z)), acb(half * x, -half * y)],
        [acb(half * x, half * y), acb(half * (1 - z))],
    ])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
