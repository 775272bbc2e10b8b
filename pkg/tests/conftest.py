import numpy as np
import pytest
from hypothesis import settings

from routerkit.core_model import reference_params

settings.register_profile("routerkit", derandomize=True, deadline=None, max_examples=1000)
settings.load_profile("routerkit")


@pytest.fixture
def reference():
    """Reference device: delta = 0.02 kappa, sigma_sd = 0.6 GHz."""
    return reference_params()


@pytest.fixture
def resonant(reference):
    """Reference rates with the emitter on the cavity and no spectral diffusion."""
    return reference.updated(omega_qd=0.0, sigma_sd=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
