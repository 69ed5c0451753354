from math import factorial

import numpy as np
import pytest
from scipy.sparse import diags, identity, kron

from qeilab import _accel
from qeilab.bounds import classical_energy
from qeilab.errors import CutoffError, GridMismatchError
from qeilab.field import (ClassicalSolution, Coherent, ModeBasis, Particles, Thermal, Vacuum, bose, classical_stress,
                          commutator, energy_density, localized_two_point_spectrum, mode_overlaps, occupations, one_point,
                          random_solution, required_cutoff, smeared_field_square, state_from_descriptor,
                          stress_expectation, two_point, wick_square)
from qeilab.grid import TestFunction, bump, make_grid, plateau
from qeilab.kernels import ConeSpec, cone_sobolev_integral, positivity_check

L = 2 * np.pi


@pytest.fixture(scope="module")
def grid():
    return make_grid(L, 3.0, 64, 32)


@pytest.fixture(scope="module")
def basis():
    return ModeBasis(1.0, L, 30)


def some_states(basis):
    return [Vacuum(), Thermal(1.0), Coherent(((0, 0.7 + 0.2j), (2, -0.4j))), Particles(((1, 1), (-2, 2)))]


def test_required_cutoff_is_enough():
    for beta in (0.5, 1.0, 5.0):
        N = required_cutoff(beta, 1.0, L)
        occupations(Thermal(beta), ModeBasis(1.0, L, N))
        with pytest.raises(CutoffError):
            occupations(Thermal(beta), ModeBasis(1.0, L, max(N - 2, 0)))


def test_state_descriptors_round_trip(basis):
    for s in some_states(basis):
        assert state_from_descriptor(s.descriptor()) == s
    with pytest.raises(ValueError):
        state_from_descriptor({"kind": "squeezed"})


@pytest.mark.parametrize("bad", [lambda: Thermal(0.0), lambda: Particles(((0, -1),)), lambda: ModeBasis(0.0, L, 3),
                                 lambda: ModeBasis(1.0, L, 2.5)])
def test_invalid_inputs(bad):
    with pytest.raises(ValueError):
        bad()


# -- commutator and two-point functions -------------------------------------------


def test_commutator_state_independent(grid, basis, rng):
    scale_checked = 0
    for _ in range(10):
        c1 = (rng.uniform(-1, 1), rng.uniform(0, L))
        c2 = (rng.uniform(-1, 1), rng.uniform(0, L))
        f = bump(grid, c1, (rng.uniform(0.8, 1.5), rng.uniform(0.8, 1.5)))
        h = bump(grid, c2, (rng.uniform(0.8, 1.5), rng.uniform(0.8, 1.5)))
        ref = commutator(f, h, basis)
        assert abs(ref.real) < 1e-12 * max(abs(ref), 1e-300) + 1e-15
        for s in some_states(basis):
            ev, _ = two_point(s, basis)
            a, b = ev.pair(f, h, None), ev.pair(h, f, None)
            scale = max(abs(a), abs(b))
            assert abs((a - b) - ref) <= 1e-8 * scale
            scale_checked += 1
    assert scale_checked == 40


def test_vacuum_pairing_positive(grid, basis, rng):
    ev, _ = two_point(Vacuum(), basis)
    for _ in range(10):
        vals = rng.normal(size=grid.shape) * bump(grid, (0.0, 3.0), (2.0, 2.5)).values
        f = TestFunction(grid, vals, ((-2, 2), None))
        assert ev.pair(f, f, None).real > 0


def test_mode_sum_matches_dense_kernel(grid):
    b = ModeBasis(1.0, L, required_cutoff(2.0, 1.0, L))
    f = bump(grid, (0.0, 2.0), (1.5, 2.0))
    for s in (Vacuum(), Thermal(2.0), Coherent(((1, 0.5),))):
        ev, K = two_point(s, b, grid)
        dense = np.conj(f.flat) @ K.data @ f.flat * grid.w_site ** 2
        assert ev.pair(f, f, None) == pytest.approx(dense, rel=1e-10)


def test_kernels_are_positive(grid):
    b = ModeBasis(1.0, L, required_cutoff(1.0, 1.0, L))
    g = make_grid(L, 3.0, 32, 16)
    for s in (Vacuum(), Thermal(1.0), Coherent(((0, 1.0), (1, 0.3j))), Particles(((0, 2),))):
        ev, K = two_point(s, b, g)
        assert positivity_check(K, tol=1e-10).positive
        K_trunc = ev.truncated().kernel(g)
        assert positivity_check(K_trunc, tol=1e-10).positive


def test_coherent_truncation_is_vacuum():
    b = ModeBasis(1.0, L, 8)
    g = make_grid(L, 3.0, 16, 8)
    ev, _ = two_point(Coherent(((1, 1.0 - 1j),)), b, g)
    _, vac = two_point(Vacuum(), b, g)
    assert np.allclose(ev.truncated().kernel(g).data, vac.data, atol=1e-14)


def test_kg_residual():
    """Fourth-order finite differences of the two-point function in the first argument."""
    b = ModeBasis(1.3, L, required_cutoff(1.5, 1.3, L))
    h = 1e-3
    offs = np.array([-2, -1, 0, 1, 2]) * h
    w4 = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
    t0, x0 = 0.37, 1.1
    for s in (Vacuum(), Thermal(1.5), Particles(((2, 1),))):
        ev, _ = two_point(s, b)
        ts = np.concatenate([t0 + offs, np.full(5, t0), [0.0]])
        xs = np.concatenate([np.full(5, x0), x0 + offs, [0.0]])
        K = _accel.mode_kernel(ts, xs, b.omega, b.k, ev.c_pos, ev.c_neg)[:, -1]
        d2t = w4 @ K[:5]
        d2x = w4 @ K[5:10]
        res = d2t - d2x + b.m ** 2 * K[2]
        scale = np.abs(d2t) + np.abs(d2x) + b.m ** 2 * np.abs(K[2])
        assert abs(res) <= 1e-6 * scale


def test_mode_cutoff_checks(grid):
    with pytest.raises(CutoffError):
        two_point(Coherent(((40, 1.0),)), ModeBasis(1.0, L, 10))
    ev, _ = two_point(Vacuum(), ModeBasis(1.0, L, 3))
    sharp = bump(grid, (0.0, 1.0), (0.3, 0.3))
    with pytest.raises(CutoffError):
        ev.pair(sharp, sharp)
    other = make_grid(3.0, 3.0, 16, 8)
    with pytest.raises(GridMismatchError):
        ev.kernel(other)


# -- Fock-space oracle ------------------------------------------------------------


def ladder_ops(n_modes, cap):
    a = diags(np.sqrt(np.arange(1, cap)), 1)
    eye = identity(cap)
    ops = []
    for j in range(n_modes):
        op = None
        for i in range(n_modes):
            fac = a if i == j else eye
            op = fac if op is None else kron(op, fac)
        ops.append(op.tocsr())
    return ops


def basis_vector(occ, cap):
    idx = 0
    for q in occ:
        idx = idx * cap + q
    v = np.zeros(cap ** len(occ), dtype=complex)
    v[idx] = 1.0
    return v


def field_operator(f, basis, ops):
    M, P = mode_overlaps(np.real(f.values), f.grid, basis)
    out = None
    for j, a in enumerate(ops):
        term = np.sqrt(basis.c[j]) * (P[j] * a + M[j] * a.conj().T)
        out = term if out is None else out + term
    return out


def coherent_vector(alphas, cap):
    v = np.ones(1, dtype=complex)
    for al in alphas:
        k = np.arange(cap)
        single = np.exp(-abs(al) ** 2 / 2) * al ** k / np.sqrt([float(factorial(int(i))) for i in k])
        v = np.kron(v, single)
    return v


@pytest.mark.parametrize("occ", [(0, 0, 0), (1, 0, 0), (0, 2, 1), (2, 2, 2)])
def test_particle_states_match_fock_space(occ):
    b = ModeBasis(1.0, L, 1)
    g = make_grid(L, 3.0, 32, 16)
    f = bump(g, (0.0, 1.0), (1.2, 1.5))
    h = bump(g, (0.4, 2.5), (1.0, 1.0))
    cap = 5
    ops = ladder_ops(3, cap)
    psi = basis_vector(occ, cap)
    want = psi.conj() @ (field_operator(f, b, ops) @ (field_operator(h, b, ops) @ psi))
    state = Particles(tuple((n, q) for n, q in zip((-1, 0, 1), occ)))
    ev, _ = two_point(state, b)
    assert ev.pair(f, h, None) == pytest.approx(want, rel=1e-12, abs=1e-14)


def test_coherent_state_matches_fock_space():
    b = ModeBasis(1.0, L, 1)
    g = make_grid(L, 3.0, 32, 16)
    f = bump(g, (0.0, 1.0), (1.2, 1.5))
    h = bump(g, (0.4, 2.5), (1.0, 1.0))
    alphas = (0.3 - 0.2j, 0.8, 0.5j)
    cap = 30
    ops = ladder_ops(3, cap)
    psi = coherent_vector(alphas, cap)
    want = psi.conj() @ (field_operator(f, b, ops) @ (field_operator(h, b, ops) @ psi))
    state = Coherent(tuple(zip((-1, 0, 1), alphas)))
    ev, _ = two_point(state, b)
    assert ev.pair(f, h, None) == pytest.approx(want, rel=1e-10)


# -- classical solutions ------------------------------------------------------------


@pytest.mark.parametrize("A,m", [(1.0, 1.0), (2.5, 0.5), (0.3, 2.0)])
def test_zero_mode_energy_density(A, m):
    phi = ClassicalSolution.zero_mode(A, m, L)
    t = np.linspace(-3, 3, 7)
    x = np.linspace(0, L, 7)
    assert np.allclose(phi(t, 0.0), A * np.cos(m * t), atol=1e-14)
    assert np.allclose(energy_density(phi, t, x), 0.5 * A * A * m * m, rtol=1e-13)
    assert phi.energy() == pytest.approx(0.5 * A * A * m * m * L, rel=1e-13)


def test_one_point_of_zero_mode():
    s = Coherent.zero_mode(2.0, 1.0, L)
    assert one_point(s, 0.0, 1.234, m=1.0, L=L) == pytest.approx(2.0, rel=1e-14)
    assert one_point(Thermal(1.0), np.zeros(3), 0.0).tolist() == [0.0, 0.0, 0.0]


def test_energy_conservation(rng):
    x = np.arange(256) * L / 256
    for _ in range(20):
        phi = random_solution(rng, rng.uniform(0.5, 2.0), L)
        E = phi.energy()
        for t in (-2.0, 0.0, 1.3):
            assert np.sum(energy_density(phi, t, x)) * L / 256 == pytest.approx(E, rel=1e-6)


def test_classical_stress_components(rng):
    phi = random_solution(rng, 1.0, L)
    t, x = rng.uniform(-1, 1, 5), rng.uniform(0, L, 5)
    T = classical_stress(phi, t, x)
    assert np.allclose(T[..., 0, 0], energy_density(phi, t, x))
    assert np.allclose(T[..., 0, 1], T[..., 1, 0])
    # T_00 + T_11 is the sum of squared derivatives
    pt, px = phi.gradient(t, x)
    assert np.allclose(T[..., 0, 0] + T[..., 1, 1], pt ** 2 + px ** 2)


def test_solution_gradient_matches_finite_differences(rng):
    phi = random_solution(rng, 1.0, L)
    h = 1e-5
    pt, px = phi.gradient(0.3, 1.7)
    assert (phi(0.3 + h, 1.7) - phi(0.3 - h, 1.7)) / (2 * h) == pytest.approx(pt, rel=1e-7, abs=1e-9)
    assert (phi(0.3, 1.7 + h) - phi(0.3, 1.7 - h)) / (2 * h) == pytest.approx(px, rel=1e-7, abs=1e-9)


# -- Wick square and stress ---------------------------------------------------------


def test_vacuum_stress_is_exactly_zero(grid, basis):
    F = plateau(grid, ((-1.5, 1.5), None), ((-2.5, 2.5), None))
    assert stress_expectation(Vacuum(), F, basis) == 0.0
    assert wick_square(Vacuum(), F, basis) == 0.0
    assert stress_expectation(Coherent(((0, 0.0),)), F, basis) == 0.0


def test_thermal_stress_against_boltzmann_sums(grid):
    beta = 1.0
    b = ModeBasis(1.0, L, required_cutoff(beta, 1.0, L))
    F = plateau(grid, ((-1.5, 1.5), None), ((-2.5, 2.5), None))
    levels = np.arange(400)[:, None]
    boltz = np.exp(-beta * b.omega[None, :] * levels)
    N = (levels * boltz).sum(0) / boltz.sum(0)
    F2 = np.sum(np.real(F.values) ** 2) * grid.w_site
    assert np.allclose(N, bose(beta, b.omega), rtol=1e-12)
    assert stress_expectation(Thermal(beta), F, b) == pytest.approx(np.sum(N * b.omega) / L * F2, rel=1e-10)
    assert wick_square(Thermal(beta), F, b) == pytest.approx(
        np.sum(N / b.omega) / L * np.sum(np.real(F.values)) * grid.w_site, rel=1e-10)


def test_thermal_wick_square_from_point_splitting():
    b = ModeBasis(1.0, L, required_cutoff(1.0, 1.0, L))
    g = make_grid(L, 3.0, 16, 8)
    G = plateau(g, ((-1.5, 1.5), None), ((-2.5, 2.5), None))
    _, KT = two_point(Thermal(1.0), b, g)
    _, K0 = two_point(Vacuum(), b, g)
    diag = np.real(np.diag(KT.data) - np.diag(K0.data))
    want = np.sum(diag * np.real(G.flat)) * g.w_site
    assert wick_square(Thermal(1.0), G, b) == pytest.approx(want, rel=1e-12)


def test_coherent_stress_equals_classical_energy(grid, basis, rng):
    F = plateau(grid, ((-1.5, 1.5), None), ((-2.5, 2.5), None))
    for _ in range(5):
        phi = random_solution(rng, basis.m, L)
        state = Coherent(phi.amplitudes)
        assert stress_expectation(state, F, basis) == pytest.approx(classical_energy(phi, F), rel=1e-10)
        direct = np.sum(np.real(F.values) * phi.on_grid(grid) ** 2) * grid.w_site
        assert wick_square(state, F, basis) == pytest.approx(direct, rel=1e-10)


def test_zero_mode_stress(grid):
    b = ModeBasis(2.0, L, 5)
    F = plateau(grid, ((-1.5, 1.5), None), ((-2.5, 2.5), None))
    F2 = np.sum(np.real(F.values) ** 2) * grid.w_site
    A = 1.7
    E = stress_expectation(Coherent.zero_mode(A, 2.0, L), F, b)
    assert E == pytest.approx(0.5 * A * A * 4.0 * F2, rel=1e-12)


def test_smeared_field_square(grid, basis):
    f = bump(grid, (0.0, 2.0), (1.5, 2.0))
    big = ModeBasis(1.0, L, required_cutoff(0.5, 1.0, L))
    vac = smeared_field_square(Vacuum(), f, big, tail_tol=1e-6)
    hot = smeared_field_square(Thermal(0.5), f, big, tail_tol=1e-6)
    assert vac > 0 and hot > vac
    with pytest.raises(ValueError):
        smeared_field_square(Vacuum(), f.with_values(1j * f.values), basis)


def test_smeared_field_square_against_direct_sum(grid):
    """Oracle: sum over the grid of f(a) f(b) times the closed-form mode sum of the two-point function."""
    b = ModeBasis(1.0, L, 8)
    f = bump(grid, (0.0, 2.0), (1.5, 2.0))
    tt, xx = grid.mesh
    total = 0.0
    for w, k, c in zip(b.omega, b.k, b.c):
        overlap = np.sum(f.values * np.exp(-1j * w * tt + 1j * k * xx)) * grid.w_site
        total += c * abs(overlap) ** 2
    assert smeared_field_square(Vacuum(), f, b, None) == pytest.approx(total, rel=1e-12)


# -- Hadamard pattern of the vacuum ---------------------------------------------------


@pytest.fixture(scope="module")
def vacuum_spectrum():
    g = make_grid(L, np.pi, 48, 48)
    loc = bump(g, (0.0, g.L / 2), (0.4 * g.T, 0.4 * g.L))
    ev, _ = two_point(Vacuum(), ModeBasis(1.0, g.L, 18))
    spec = localized_two_point_spectrum(ev, loc)
    kmax = min(np.abs(g.omega).max(), np.abs(g.k).max())
    return spec, tuple(np.linspace(kmax / 3, 1.4 * kmax, 14))


@pytest.mark.parametrize("direction,s,expect", [
    ((-1.0, 1.0, 1.0, -1.0), 0.6, "growing"),
    ((-1.0, 0.0, 1.0, 0.0), 0.4, "bounded"),
    ((0.0, 1.0, 0.0, -1.0), 0.4, "bounded"),
])
def test_vacuum_hadamard_pattern(vacuum_spectrum, direction, s, expect):
    spec, cuts = vacuum_spectrum
    assert cone_sobolev_integral(spec, ConeSpec(direction, 0.3, s, cuts)).verdict == expect
