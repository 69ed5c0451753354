"""Compare the compiled and pure-numpy paths of the accelerated kernels.

Each kernel is timed on both paths with the same inputs and the outputs are
checked for agreement.  Run with ``python benchmarks/bench_accel.py``; pass
``--quick`` for small sizes.
"""
import argparse
import time

import numpy as np

from qeilab import _accel


def best_of(fn, args, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(rng, quick):
    n_sites = 256 if quick else 1024
    n_modes = 25 if quick else 61
    t = rng.uniform(-3, 3, n_sites)
    x = rng.uniform(0, 2 * np.pi, n_sites)
    n = np.arange(n_modes) - n_modes // 2
    omega = np.sqrt(1.0 + n ** 2.0)
    c_pos = 1 / (2 * np.pi * omega)
    c_neg = 0.1 * c_pos
    yield "mode_kernel", (t, x, omega, n.astype(float), c_pos, c_neg), _accel.mode_kernel_numpy, "_mode_kernel_nb"

    coords = np.stack([t, x], axis=1)
    vals = rng.normal(size=n_sites) + 1j * rng.normal(size=n_sites)
    freqs = rng.normal(size=(n_modes * 4, 2)) * 5
    yield "direct_transform", (coords, vals, freqs), _accel.direct_transform_numpy, "_direct_transform_nb"

    m = 20000 if quick else 200000
    kvecs = rng.normal(size=(m, 4)) * 10
    dens = rng.uniform(size=m)
    direction = np.array([1.0, 0.0, -1.0, 0.0]) / np.sqrt(2)
    cut = np.linspace(5, 30, 12)
    yield "cone_partials", (kvecs, dens, direction, 0.3, cut), _accel.cone_partials_numpy, "_cone_partials_nb"

    grid = rng.normal(size=(64, 48) if quick else (256, 128))
    st = rng.uniform(size=(9, 7))
    yield "stencil_convolve", (grid, st, 4, 3), _accel.stencil_convolve_numpy, "_stencil_convolve_nb"


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true", help="small problem sizes")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"numba available: {_accel.HAVE_NUMBA}")
    print(f"{'kernel':<18} {'numpy [s]':>10} {'numba [s]':>10} {'speedup':>8} {'max diff':>10}")
    for name, inputs, ref, nb_name in cases(rng, args.quick):
        t_np, out_np = best_of(ref, inputs, args.repeat)
        if not _accel.HAVE_NUMBA:
            print(f"{name:<18} {t_np:10.4f} {'-':>10} {'-':>8} {'-':>10}")
            continue
        nb = getattr(_accel, nb_name)
        nb(*inputs)  # compile outside the timed region
        t_nb, out_nb = best_of(nb, inputs, args.repeat)
        a = out_np[0] if isinstance(out_np, tuple) else out_np
        b = out_nb[0] if isinstance(out_nb, tuple) else out_nb
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:<18} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:10.2e}")


if __name__ == "__main__":
    main()
