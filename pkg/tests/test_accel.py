import json
import os
import subprocess
import sys

import numpy as np
import pytest

from qeilab import _accel

needs_numba = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba path not available")


def mode_inputs(rng):
    t, x = rng.uniform(-3, 3, 60), rng.uniform(0, 2 * np.pi, 60)
    n = np.arange(-7, 8).astype(float)
    omega = np.sqrt(1.0 + n ** 2)
    c = 1 / (2 * np.pi * omega)
    return t, x, omega, n, c, 0.3 * c


@needs_numba
def test_mode_kernel_paths_agree(rng):
    args = mode_inputs(rng)
    a = _accel.mode_kernel_numpy(*args)
    b = _accel._mode_kernel_nb(*args)
    assert np.allclose(a, b, rtol=0, atol=1e-13)
    assert np.allclose(a, a.conj().T, atol=1e-14)


@needs_numba
def test_direct_transform_paths_agree(rng):
    coords = rng.uniform(-2, 2, size=(200, 2))
    vals = rng.normal(size=200) + 1j * rng.normal(size=200)
    freqs = rng.normal(size=(40, 2)) * 4
    a = _accel.direct_transform_numpy(coords, vals, freqs)
    b = _accel._direct_transform_nb(coords, vals, freqs)
    assert np.allclose(a, b, rtol=0, atol=1e-11)


@needs_numba
def test_cone_partials_paths_agree(rng):
    kv = rng.normal(size=(5000, 3)) * 10
    dens = rng.uniform(size=5000)
    d = np.array([1.0, 1.0, 0.0]) / np.sqrt(2)
    cut = np.linspace(2, 30, 9)
    (a, na), (b, nb) = _accel.cone_partials_numpy(kv, dens, d, 0.4, cut), _accel._cone_partials_nb(kv, dens, d, 0.4, cut)
    assert na == nb
    assert np.allclose(a, b, rtol=1e-12)


@needs_numba
@pytest.mark.parametrize("shape,ri,rj", [((40, 24), 3, 2), ((9, 5), 5, 3), ((16, 16), 0, 0)])
def test_stencil_paths_agree(rng, shape, ri, rj):
    vals = rng.normal(size=shape)
    st = rng.uniform(size=(2 * ri + 1, 2 * rj + 1))
    a = _accel.stencil_convolve_numpy(vals, st, ri, rj)
    b = _accel._stencil_convolve_nb(vals, st, ri, rj)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_stencil_delta_is_identity(rng):
    vals = rng.normal(size=(12, 8)) + 1j * rng.normal(size=(12, 8))
    st = np.zeros((3, 3))
    st[1, 1] = 1.0
    assert np.array_equal(_accel.stencil_convolve(vals, st, 1, 1), vals)


def test_stencil_shift_is_circular_in_space_only():
    vals = np.arange(12.0).reshape(3, 4)
    st = np.zeros((3, 3))
    st[1, 2] = 1.0                       # shift by +1 along axis 1
    assert np.array_equal(_accel.stencil_convolve(vals, st, 1, 1), np.roll(vals, 1, axis=1))
    st = np.zeros((3, 3))
    st[2, 1] = 1.0                       # shift by +1 along axis 0, zero-padded
    out = _accel.stencil_convolve(vals, st, 1, 1)
    assert np.array_equal(out[1:], vals[:-1]) and np.all(out[0] == 0)


SCRIPT = """
import json, numpy as np
from qeilab import _accel
from qeilab.field import ModeBasis, Thermal, two_point
from qeilab.grid import make_grid
g = make_grid(2 * np.pi, 3.0, 8, 8)
_, K = two_point(Thermal(2.0), ModeBasis(1.0, 2 * np.pi, 16), g)
print(json.dumps({"numba": _accel.USE_NUMBA, "trace": float(np.trace(K.data).real),
                  "corner": float(K.data[3, 17].imag)}))
"""


def run_script(no_numba):
    env = dict(os.environ)
    env.pop("QEILAB_NO_NUMBA", None)
    if no_numba:
        env["QEILAB_NO_NUMBA"] = "1"
    res = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def test_environment_flag_selects_numpy_path():
    plain = run_script(True)
    assert plain["numba"] is False
    default = run_script(False)
    assert default["numba"] is _accel.HAVE_NUMBA
    assert default["trace"] == pytest.approx(plain["trace"], rel=1e-12)
    assert default["corner"] == pytest.approx(plain["corner"], rel=1e-10, abs=1e-14)
