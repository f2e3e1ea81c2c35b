import numpy as np
import pytest

from dvme.numerics import backend

BACKENDS = sorted(backend.available())


@pytest.fixture(params=BACKENDS)
def kernel_backend(request):
    """Runs the test once per available kernel backend."""
    with backend.use(request.param):
        yield request.param


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
