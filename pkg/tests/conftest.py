import os

import numpy as np
import pytest

from qeilab.grid import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_grid():
    return make_grid(2 * np.pi, 3.0, 32, 16)


def pytest_report_header(config):
    from qeilab import _accel

    path = "numba" if _accel.USE_NUMBA else "numpy"
    return f"qeilab accelerated path: {path} (QEILAB_NO_NUMBA={os.environ.get('QEILAB_NO_NUMBA', '0')})"
