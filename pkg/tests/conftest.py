import numpy as np
import pytest

from lsvg import numerics as nm


@pytest.fixture(autouse=True)
def _finite_checks():
    # every forward/backward value must stay finite while tests run
    nm.set_debug_checks(True)
    yield
    nm.set_debug_checks(False)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
