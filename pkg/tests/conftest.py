import os

import numpy as np
import pytest
from hypothesis import settings

from ckmpm import _accel

BACKENDS = ["numba", "numpy"] if _accel.HAS_NUMBA else ["numpy"]

# first calls may pay for JIT compilation
settings.register_profile("ckmpm", deadline=None)
settings.load_profile("ckmpm")

FULLSCALE = os.environ.get("CKMPM_FULLSCALE", "0") == "1"


@pytest.fixture(params=BACKENDS)
def backend(request):
    prev = _accel.backend()
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
