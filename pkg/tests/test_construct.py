import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qeilab.bounds import QeiSetup, plane_wave_table, qei_verify, vacuum_pairings
from qeilab.construct import (SpectralSymbol, assemble_constants, bound_constant_Cprime, build_atlas_cylinder,
                              build_u, build_v, build_w, chart_factors, frame_derivatives, lattice_v_hat,
                              symbol_kernel, u_form, v_hat, w_form)
from qeilab.errors import CoverageError, GridError, ResolutionError
from qeilab.field import Vacuum
from qeilab.grid import LineFunction, LineGrid, TestFunction, bump, bump_profile, make_grid, plateau
from qeilab.kernels import KernelMatrix, decay_exponent, fit_decay, pair, positivity_check

CERT_CONFIGS = [
    ((0.0, np.pi), (1.0, 1.0), 3),
    ((0.3, 1.0), (0.8, 1.5), 3),
    ((-0.4, 4.0), (1.2, 0.7), 2),
    ((0.0, 2.0), (1.5, 2.0), 3),
    ((0.5, 5.5), (0.6, 0.6), 1),
]


def setup_on(Nt, Nx, T=3.0):
    g = make_grid(2 * np.pi, T, Nt, Nx)
    F = plateau(g, ((-1.6, 1.6), None), ((-2.4, 2.4), None))
    return g, F, build_atlas_cylinder(g, (-2.4, 2.4))


# -- the one-sided symbol --------------------------------------------------------


def test_v_hat_values():
    assert v_hat(1, 0.0) == 0.5
    assert v_hat(2, 1.0) == 0.125
    assert v_hat(1, -1.0) == 0.75
    assert v_hat(3, 2.0) == pytest.approx(0.5 / 125)


@pytest.mark.parametrize("l", [1, 2, 3])
def test_v_hat_symmetrisation(l):
    k = np.linspace(0.01, 50, 500)
    assert np.allclose(v_hat(l, k) + v_hat(l, -k), 1.0, atol=1e-15)


@pytest.mark.parametrize("n", [64, 65, 256])
def test_lattice_symbol_sums_to_one_exactly(n):
    k = 2 * np.pi * np.fft.fftfreq(n, d=0.1)
    vh = lattice_v_hat(2, k)
    mirror = vh[(-np.arange(n)) % n]
    assert np.all(vh + mirror == 1.0)


def test_v_hat_lower_bound():
    sym = SpectralSymbol(2)
    k = np.linspace(-30, 30, 601)
    assert np.all(sym(k) >= sym.lower_bound(k))
    assert np.all(sym(k) <= 1.0) and np.all(sym(k) > 0)


def test_v_hat_rejects_bad_order():
    with pytest.raises(ValueError):
        v_hat(0, 1.0)
    with pytest.raises(ValueError):
        v_hat(1.5, 1.0)


@pytest.mark.parametrize("l", [1, 2, 3])
def test_v_decay_on_positive_ray(l):
    """Direct-sum oracle: the localised transform at +k follows -2l."""
    lg = LineGrid(200.0, 4096)
    B = bump_profile(np.abs(lg.x) / 60.0)
    v = build_v(l, lg)
    fit = decay_exponent(LineFunction(lg, B * v.values), (1.0,), np.linspace(2.0, 30.0, 40))
    assert abs(fit.slope + 2 * l) <= 0.5


def test_v_is_not_real():
    lg = LineGrid(50.0, 512)
    v = build_v(1, lg).values
    # a one-sided symbol cannot be Hermitian, so v has an imaginary part
    assert np.max(np.abs(v.imag)) > 1e-3
    # but v + its reflection is a real delta, and v(-x) = conj(v(x))
    delta = np.where(np.isclose(lg.x, 0.0), 1.0 / lg.dx, 0.0)
    assert np.allclose(v + np.conj(v), delta, atol=1e-12)


def test_build_v_needs_resolution():
    with pytest.raises(GridError):
        build_v(1, LineGrid(10.0, 16))


# -- the atlas -------------------------------------------------------------------


def test_atlas_partition_of_unity():
    g, F, atlas = setup_on(48, 48)
    assert atlas.n == 2
    tt, _ = g.mesh
    slab = np.abs(tt) <= 2.4
    assert np.max(np.abs(atlas.partition_sum()[slab] - 1.0)) < 1e-10


def test_atlas_cutoffs_live_in_their_charts():
    g, _, atlas = setup_on(48, 48)
    for j, c in enumerate(atlas.charts):
        _, y = atlas.kappa(j)
        assert np.all(np.abs(c.chi[np.abs(y) >= c.half_width]) < 1e-15)


def test_atlas_rejects_time_boundary():
    g = make_grid(2 * np.pi, 3.0, 32, 16)
    with pytest.raises(GridError):
        build_atlas_cylinder(g, (-3.0, 1.0))


def test_chart_factors_need_coverage():
    g, F, atlas = setup_on(48, 16)
    short = build_atlas_cylinder(g, (-1.0, 1.0))
    with pytest.raises(CoverageError):
        chart_factors(F, short)


def test_f_must_sit_inside_F():
    g, F, atlas = setup_on(48, 16)
    f = bump(g, (2.0, 1.0), (0.9, 1.0))
    with pytest.raises(CoverageError):
        build_u(f, F, atlas, 2)


# -- the kernel u ------------------------------------------------------------------


def test_symbol_kernel_symmetrisation():
    g, _, _ = setup_on(32, 12)
    Kv = symbol_kernel(g, 2)
    assert np.allclose(Kv + Kv.T, np.eye(g.n_sites) / g.w_site, atol=1e-10 / g.w_site)


def test_u_symmetrisation_identity():
    g, F, atlas = setup_on(48, 24)
    f = bump(g, (0.0, np.pi), (1.0, 1.0))
    U = build_u(f, F, atlas, 3)
    Fsq = np.real(F.values).ravel() ** 2
    target = np.diag(Fsq) / g.w_site
    err = np.linalg.norm(U.data + U.data.T - target) / np.linalg.norm(target)
    assert err < 1e-8


def certificate(Nt, Nx, center, radii, l):
    g, F, atlas = setup_on(Nt, Nx)
    f = bump(g, center, radii)
    Cp = bound_constant_Cprime(f, F, atlas, l, edge_tol=None)
    return positivity_check(Cp * build_u(f, F, atlas, l) - KernelMatrix.outer(f), tol=1e-6)


@pytest.mark.parametrize("center,radii,l", CERT_CONFIGS)
def test_positivity_certificate_with_doubling(center, radii, l):
    coarse = certificate(32, 12, center, radii, l)
    fine = certificate(64, 24, center, radii, l)
    assert coarse.positive and fine.positive, (coarse, fine)


def test_u_form_matches_dense_pairing(rng):
    g, F, atlas = setup_on(32, 12)
    f = bump(g, (0.0, 2.0), (1.0, 1.0))
    U = build_u(f, F, atlas, 2)
    for _ in range(4):
        h = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
        dense = pair(U, TestFunction(g, h, ((-3, 3), None)), TestFunction(g, h, ((-3, 3), None)))
        assert u_form(h, F, atlas, 2) == pytest.approx(dense.real, rel=1e-10)
        assert abs(dense.imag) < 1e-10 * abs(dense)


def test_u_is_one_sided():
    """Plane waves at positive time frequency are suppressed like the symbol; the
    mirrored wave picks up the rest of the Parseval weight of the chart factors."""
    g, F, atlas = setup_on(512, 8, T=5.0)
    tt, _ = g.mesh
    B = bump(g, (0.0, 0.0), (1.5, 1.5), spatial_constant=True).values
    freqs = np.linspace(4.0, 20.0, 20)
    pos = np.array([u_form(B * np.exp(1j * w * tt), F, atlas, 1) for w in freqs])
    neg = np.array([u_form(B * np.exp(-1j * w * tt), F, atlas, 1) for w in freqs])
    parseval = np.sum(np.real(F.values) ** 2 * B ** 2) * g.w_site
    assert np.allclose(pos + neg, parseval, rtol=1e-10)
    assert np.all(np.diff(neg) > 0) and neg[-1] == pytest.approx(parseval, rel=2e-3)
    assert fit_decay(freqs, pos).slope == pytest.approx(-2.0, abs=0.5)


# -- C' and the derivative kernel ----------------------------------------------------


def test_cprime_of_zero():
    g, F, atlas = setup_on(64, 16)
    zero = bump(g, (0.0, 1.0), (1.0, 1.0))
    zero = zero.with_values(np.zeros(g.shape))
    assert bound_constant_Cprime(zero, F, atlas, 2) == 0.0


def test_cprime_quadratic_scaling():
    s = QeiSetup(1.0)
    g, f, F, atlas, _ = s.build()
    a = bound_constant_Cprime(f, F, atlas, 3)
    b = bound_constant_Cprime(f.with_values(2 * f.values), F, atlas, 3)
    assert b == pytest.approx(4 * a, rel=1e-12)


def test_cprime_refinement():
    s = QeiSetup(1.0)
    vals = []
    for setup in (s, s.refined(2, modes=False)):
        _, f, F, atlas, _ = setup.build()
        vals.append(bound_constant_Cprime(f, F, atlas, setup.l))
    assert vals[1] == pytest.approx(vals[0], rel=1e-4)


def test_cprime_flags_unresolved_grid():
    g, F, atlas = setup_on(32, 12)
    f = bump(g, (0.0, np.pi), (0.8, 1.0))
    with pytest.raises(ResolutionError):
        bound_constant_Cprime(f, F, atlas, 3)


def test_w_is_positive():
    g, F, atlas = setup_on(32, 12)
    W = build_w(F, atlas, 2)
    assert positivity_check(W, tol=1e-9).positive


def test_w_form_matches_dense(rng):
    g, F, atlas = setup_on(32, 12)
    W = build_w(F, atlas, 2)
    Dt, Dx = frame_derivatives(g)
    for _ in range(20):
        h = rng.normal(size=g.shape)
        dense = pair(W, TestFunction(g, h, ((-3, 3), None)), TestFunction(g, h, ((-3, 3), None)))
        assert dense.real >= 0
        grads = [(D @ h.ravel()).reshape(g.shape) for D in (Dt, Dx)]
        assert w_form(grads, F, atlas, 2) == pytest.approx(dense.real, rel=1e-9)


def test_vacuum_c2_nonnegative():
    s = QeiSetup(1.0, Nt=256, Nx=32, N_max=20)
    _, f, F, atlas, basis = s.build()
    c0, c2 = vacuum_pairings(plane_wave_table(f, F, atlas, basis, s.l))
    assert c0 > 0 and c2 >= 0


# -- constants ---------------------------------------------------------------------------


def test_assemble_constants():
    k = assemble_constants(8.0, 0.5, 0.25, 2.0)
    assert k.C == 2.0 and k.c == 2.25
    k = assemble_constants(8.0, 0.5, 0.25, 0.5, delta_max=0.1)
    assert k.C == 32.0 and k.c == pytest.approx(0.125 + 0.25 + 0.1)
    assert set(k.as_dict()) == {"Cprime", "C", "c0", "c2", "c", "delta_max", "m"}


@pytest.mark.parametrize("args", [(np.nan, 0, 0, 1), (1, np.inf, 0, 1), (1, 0, 0, 0.0), (1, 0, 0, -1.0)])
def test_assemble_constants_rejects(args):
    with pytest.raises(ValueError):
        assemble_constants(*args)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 1e4), st.floats(0, 10), st.floats(0, 10), st.floats(0.1, 5))
def test_assemble_constants_formula(Cp, c0, c2, m):
    k = assemble_constants(Cp, c0, c2, m)
    assert k.C * m * m == pytest.approx(Cp)
    assert k.c == pytest.approx(m * m * c0 + c2)


def test_c_refinement():
    s = QeiSetup(1.0)
    coarse = qei_verify([Vacuum()], *_parts(s)).constants
    fine = qei_verify([Vacuum()], *_parts(s.refined())).constants
    assert fine.c == pytest.approx(coarse.c, rel=1e-4)
    assert fine.C == pytest.approx(coarse.C, rel=1e-4)


def _parts(setup):
    _, f, F, atlas, basis = setup.build()
    return f, F, basis, setup.l, atlas
