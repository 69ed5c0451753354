"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics.  The compiled
path is used unless ``QEILAB_NO_NUMBA=1`` is set in the environment (or numba
fails to import).  ``QEILAB_THREADS`` caps the numba thread pool.
"""
import os

import numpy as np

_DISABLED = os.environ.get("QEILAB_NO_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by QEILAB_NO_NUMBA")
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA

if HAVE_NUMBA and "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    # try OpenMP first; an outdated system TBB otherwise triggers a warning on first launch
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

if HAVE_NUMBA and os.environ.get("QEILAB_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["QEILAB_THREADS"]), numba.config.NUMBA_NUM_THREADS)))


# ---------------------------------------------------------------------------
# numpy reference implementations


def mode_kernel_numpy(t, x, omega, k, c_pos, c_neg):
    """Dense two-point matrix  sum_n c_pos e_n(a) conj(e_n(b)) + c_neg conj(e_n(a)) e_n(b).

    ``e_n(t, x) = exp(-i omega_n t + i k_n x)``; ``t``, ``x`` are flat site coordinates.
    """
    n = t.shape[0]
    out = np.zeros((n, n), dtype=np.complex128)
    for on, kn, cp, cn in zip(omega, k, c_pos, c_neg):
        e = np.exp(-1j * on * t + 1j * kn * x)
        if cp != 0.0:
            out += cp * np.outer(e, e.conj())
        if cn != 0.0:
            out += cn * np.outer(e.conj(), e)
    return out


def direct_transform_numpy(coords, values, freqs):
    """sum_a values_a exp(-i freq . coord_a) for every row of ``freqs``."""
    phase = freqs @ coords.T
    return np.exp(-1j * phase) @ values


def cone_partials_numpy(kvecs, density, direction, alpha, cutoffs):
    """Partial sums of ``density`` over lattice points inside the cone, one per cutoff."""
    along = kvecs @ direction
    perp = np.sqrt(np.maximum(np.sum(kvecs * kvecs, axis=1) - along * along, 0.0))
    inside = alpha * along > perp
    norms = np.sqrt(np.sum(kvecs * kvecs, axis=1))
    out = np.empty(len(cutoffs))
    for r, K in enumerate(cutoffs):
        out[r] = density[inside & (norms <= K)].sum()
    return out, int(inside.sum())


def stencil_convolve_numpy(values, stencil, ri, rj):
    """Zero-padded in axis 0, circular in axis 1 convolution with a centred stencil."""
    nt = values.shape[0]
    out = np.zeros_like(values)
    for di in range(-ri, ri + 1):
        lo, hi = max(0, di), min(nt, nt + di)
        if lo >= hi:
            continue
        for dj in range(-rj, rj + 1):
            s = stencil[di + ri, dj + rj]
            if s == 0.0:
                continue
            out[lo:hi] += s * np.roll(values[lo - di:hi - di], dj, axis=1)
    return out


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @njit(cache=True, parallel=True)
    def _mode_kernel_nb(t, x, omega, k, c_pos, c_neg):
        n = t.shape[0]
        m = omega.shape[0]
        out = np.zeros((n, n), dtype=np.complex128)
        e = np.empty((m, n), dtype=np.complex128)
        for q in range(m):
            for a in range(n):
                e[q, a] = np.exp(-1j * omega[q] * t[a] + 1j * k[q] * x[a])
        for a in prange(n):
            for b in range(n):
                acc = 0.0 + 0.0j
                for q in range(m):
                    z = e[q, a] * np.conj(e[q, b])
                    acc += c_pos[q] * z + c_neg[q] * np.conj(z)
                out[a, b] = acc
        return out

    @njit(cache=True, parallel=True)
    def _direct_transform_nb(coords, values, freqs):
        m = freqs.shape[0]
        n, d = coords.shape
        out = np.zeros(m, dtype=np.complex128)
        for r in prange(m):
            acc = 0.0 + 0.0j
            for a in range(n):
                ph = 0.0
                for c in range(d):
                    ph += freqs[r, c] * coords[a, c]
                acc += values[a] * np.exp(-1j * ph)
            out[r] = acc
        return out

    @njit(cache=True)
    def _cone_partials_nb(kvecs, density, direction, alpha, cutoffs):
        n, d = kvecs.shape
        out = np.zeros(cutoffs.shape[0])
        count = 0
        for a in range(n):
            along = 0.0
            nsq = 0.0
            for c in range(d):
                along += kvecs[a, c] * direction[c]
                nsq += kvecs[a, c] * kvecs[a, c]
            perp = np.sqrt(max(nsq - along * along, 0.0))
            if alpha * along > perp:
                count += 1
                norm = np.sqrt(nsq)
                for r in range(cutoffs.shape[0]):
                    if norm <= cutoffs[r]:
                        out[r] += density[a]
        return out, count

    @njit(cache=True)
    def _stencil_convolve_nb(values, stencil, ri, rj):
        nt, nx = values.shape
        out = np.zeros_like(values)
        for i in range(nt):
            for j in range(nx):
                acc = values[0, 0] * 0.0
                for di in range(-ri, ri + 1):
                    ii = i - di
                    if ii < 0 or ii >= nt:
                        continue
                    for dj in range(-rj, rj + 1):
                        s = stencil[di + ri, dj + rj]
                        if s != 0.0:
                            acc += s * values[ii, (j - dj) % nx]
                out[i, j] = acc
        return out


# ---------------------------------------------------------------------------
# dispatch


def mode_kernel(t, x, omega, k, c_pos, c_neg):
    args = [np.ascontiguousarray(a, dtype=np.float64) for a in (t, x, omega, k, c_pos, c_neg)]
    if USE_NUMBA:
        return _mode_kernel_nb(*args)
    return mode_kernel_numpy(*args)


def direct_transform(coords, values, freqs):
    coords = np.ascontiguousarray(np.atleast_2d(coords), dtype=np.float64)
    freqs = np.ascontiguousarray(np.atleast_2d(freqs), dtype=np.float64)
    values = np.ascontiguousarray(values, dtype=np.complex128)
    if USE_NUMBA:
        return _direct_transform_nb(coords, values, freqs)
    return direct_transform_numpy(coords, values, freqs)


def cone_partials(kvecs, density, direction, alpha, cutoffs):
    kvecs = np.ascontiguousarray(kvecs, dtype=np.float64)
    density = np.ascontiguousarray(density, dtype=np.float64)
    direction = np.ascontiguousarray(direction, dtype=np.float64)
    cutoffs = np.ascontiguousarray(cutoffs, dtype=np.float64)
    if USE_NUMBA:
        out, count = _cone_partials_nb(kvecs, density, direction, float(alpha), cutoffs)
        return out, int(count)
    return cone_partials_numpy(kvecs, density, direction, alpha, cutoffs)


def stencil_convolve(values, stencil, ri, rj):
    stencil = np.ascontiguousarray(stencil, dtype=np.float64)
    if USE_NUMBA:
        v = np.ascontiguousarray(values)
        if np.iscomplexobj(v):
            return _stencil_convolve_nb(v.real.copy(), stencil, ri, rj) + 1j * _stencil_convolve_nb(
                v.imag.copy(), stencil, ri, rj)
        return _stencil_convolve_nb(v.astype(np.float64), stencil, ri, rj)
    return stencil_convolve_numpy(values, stencil, ri, rj)
