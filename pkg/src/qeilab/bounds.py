"""Verifiers for the smeared-field QEI, the classical-energy bound and the
pointwise bound in 1+1 dimensions.

All state functionals are evaluated by mode sums on the grid lattice.  For a
two-point function ``sum_r c_r psi_r(x) conj(psi_r(y))`` the pairing with the
kernel ``u`` is ``sum_r c_r pair(U, conj(psi_r), conj(psi_r))``, which
:func:`qeilab.construct.u_form` evaluates with one time FFT per chart.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import minimize_scalar

from .construct import (BoundConstants, ChartAtlas, assemble_constants, bound_constant_Cprime,
                        build_atlas_cylinder, u_form)
from .errors import BoundViolation, GridError
from .field import (ClassicalSolution, Coherent, ModeBasis, StateSpec, Vacuum, energy_density,
                    mode_overlaps, occupations, stress_expectation, wick_square)
from .grid import SpacetimeGrid, TestFunction, bump, make_grid, plateau

MODE_CHUNK = 16


# ---------------------------------------------------------------------------
# configuration of one QEI experiment


@dataclass(frozen=True)
class QeiSetup:
    """Grid, smearing functions and mode basis of one QEI configuration.

    ``f`` is a bump of radii ``f_radii`` centred at ``f_center``; ``F`` is a
    spatially constant plateau, equal to 1 on ``F_inner`` and supported in
    ``F_outer`` (time intervals).
    """

    m: float
    L: float = 2 * np.pi
    T: float = 5.0
    Nt: int = 512
    Nx: int = 64
    N_max: int = 60
    l: int = 3
    f_center: Tuple[float, float] = (0.0, np.pi)
    f_radii: Tuple[float, float] = (2.0, 1.5)
    f_scale: float = 1.0
    F_inner: Tuple[float, float] = (-2.1, 2.1)
    F_outer: Tuple[float, float] = (-4.0, 4.0)

    def refined(self, factor: int = 2, modes: bool = True) -> "QeiSetup":
        kw = asdict(self)
        kw.update(Nt=self.Nt * factor, Nx=self.Nx * factor,
                  N_max=self.N_max * factor if modes else self.N_max)
        return QeiSetup(**kw)

    def grid(self) -> SpacetimeGrid:
        return make_grid(self.L, self.T, self.Nt, self.Nx)

    def basis(self) -> ModeBasis:
        return ModeBasis(self.m, self.L, self.N_max)

    def build(self):
        """``(grid, f, F, atlas, basis)``."""
        g = self.grid()
        f = bump(g, self.f_center, self.f_radii)
        if self.f_scale != 1.0:
            f = f.with_values(f.values * self.f_scale)
        F = plateau(g, (tuple(self.F_inner), None), (tuple(self.F_outer), None))
        atlas = build_atlas_cylinder(g, tuple(self.F_outer))
        return g, f, F, atlas, self.basis()


# ---------------------------------------------------------------------------
# plane-wave tables


@dataclass(frozen=True, eq=False)
class PlaneWaveTable:
    """Per-mode pairings shared by every state of a sweep.

    ``U_pos[n] = u[conj e_n]`` (weight of ``e_n x conj e_n``), ``U_neg[n] = u[e_n]``,
    ``M``/``P`` the overlaps of ``f`` with ``conj e_n`` and ``e_n``.
    """

    basis: ModeBasis
    U_pos: np.ndarray
    U_neg: np.ndarray
    M: np.ndarray
    P: np.ndarray
    F2_integral: float

    @property
    def grad2(self) -> np.ndarray:
        return self.basis.omega ** 2 + self.basis.k ** 2


def plane_wave_table(f: TestFunction, F: TestFunction, atlas: ChartAtlas, basis: ModeBasis,
                     l: int) -> PlaneWaveTable:
    grid = atlas.grid
    tt, xx = grid.mesh
    U_pos = np.empty(len(basis.n))
    U_neg = np.empty(len(basis.n))
    for s in range(0, len(basis.n), MODE_CHUNK):
        w = basis.omega[s:s + MODE_CHUNK, None, None]
        k = basis.k[s:s + MODE_CHUNK, None, None]
        e = np.exp(-1j * w * tt + 1j * k * xx)
        U_pos[s:s + MODE_CHUNK] = u_form(e.conj(), F, atlas, l)
        U_neg[s:s + MODE_CHUNK] = u_form(e, F, atlas, l)
    M, P = mode_overlaps(np.real(f.values), grid, basis)
    F2 = float(np.sum(np.real(F.values) ** 2) * grid.w_site)
    return PlaneWaveTable(basis, U_pos, U_neg, M, P, F2)


def vacuum_pairings(table: PlaneWaveTable) -> Tuple[float, float]:
    """``(c0, c2)``: the vacuum pairings with ``u`` and ``w``."""
    c = table.basis.c
    return float(np.sum(c * table.U_pos)), float(np.sum(c * table.grad2 * table.U_pos))


# ---------------------------------------------------------------------------
# the smeared-field QEI


@dataclass
class QeiRow:
    state_id: int
    state: dict
    lhs: float
    u: float
    w: float
    energy: float
    wick: float
    rhs: float = np.nan
    margin1: float = np.nan
    margin2: float = np.nan
    margin3: float = np.nan
    delta: float = np.nan
    scale: float = np.nan
    passed: bool = False


@dataclass
class QeiReport:
    config_id: str
    constants: BoundConstants
    rows: List[QeiRow]
    tol: float
    vacuum_reference: bool = True

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failures(self) -> List[QeiRow]:
        return [r for r in self.rows if not r.passed]

    def as_dict(self) -> dict:
        return {"config_id": self.config_id, "constants": self.constants.as_dict(), "tol": self.tol,
                "reference": "vacuum", "passed": self.passed, "rows": [asdict(r) for r in self.rows]}


def state_pairings(state: StateSpec, table: PlaneWaveTable, f: TestFunction, F: TestFunction,
                   atlas: ChartAtlas, l: int) -> dict:
    """``w(phi(f)^2)``, ``w2(u)``, ``w2(w)``, renormalised energy and Wick square of one state."""
    basis = table.basis
    N = occupations(state, basis)
    c = basis.c
    c_pos, c_neg = c * (1.0 + N), c * N
    lhs = float(np.sum(c_pos * np.abs(table.M) ** 2 + c_neg * np.abs(table.P) ** 2))
    u = float(np.sum(c_pos * table.U_pos + c_neg * table.U_neg))
    w = float(np.sum((c_pos * table.U_pos + c_neg * table.U_neg) * table.grad2))
    if isinstance(state, Coherent):
        phi = ClassicalSolution.from_state(state, basis.m, basis.L)
        grid = atlas.grid
        p = phi.on_grid(grid)
        pt, px = phi.gradient_on_grid(grid)
        lhs += float(np.sum(np.real(f.values) * p) * grid.w_site) ** 2
        u += float(u_form(p, F, atlas, l))
        w += float(u_form(pt, F, atlas, l) + u_form(px, F, atlas, l))
    F2 = F.with_values(np.real(F.values) ** 2)
    return dict(lhs=lhs, u=u, w=w, energy=stress_expectation(state, F, basis),
                wick=wick_square(state, F2, basis))


def qei_verify(states: Sequence[StateSpec], f: TestFunction, F: TestFunction, basis: ModeBasis,
               l: int = 3, atlas: Optional[ChartAtlas] = None, tol: float = 1e-6,
               config_id: str = "", delta_budget: Optional[float] = None,
               raise_on_failure: bool = True) -> QeiReport:
    """Check ``w(phi(f)^2) <= C (w(T(F^2)) + c)`` with one ``(C, c)`` for all ``states``.

    The constants come from the vacuum-referenced kernel route; the
    cross-term budget is ``max(0, max Delta)`` over the family unless
    ``delta_budget`` is given.
    """
    if np.iscomplexobj(f.values) and np.any(np.imag(f.values) != 0):
        raise ValueError("f must be real")
    on = np.abs(f.values) > 0
    if np.any(np.abs(np.real(F.values[on]) - 1.0) > 1e-12):
        raise GridError("F must equal 1 on supp(f)")
    if atlas is None:
        atlas = build_atlas_cylinder(F.grid, F.support[0])
    table = plane_wave_table(f, F, atlas, basis, l)
    Cprime = bound_constant_Cprime(f, F, atlas, l)
    c0, c2 = vacuum_pairings(table)
    m2 = basis.m ** 2
    rows = []
    for i, st in enumerate(states):
        q = state_pairings(st, table, f, F, atlas, l)
        row = QeiRow(i, st.descriptor(), **q)
        du = row.u - c0 - 0.5 * row.wick
        dw = row.w - c2 - (row.energy - 0.5 * m2 * row.wick)
        row.delta = m2 * du + dw
        rows.append(row)
    dmax = max(0.0, max((r.delta for r in rows), default=0.0)) if delta_budget is None else delta_budget
    const = assemble_constants(Cprime, c0, c2, basis.m, dmax)
    for r in rows:
        r.rhs = const.C * (r.energy + const.c)
        r.margin1 = const.Cprime * r.u - r.lhs
        r.margin2 = r.w
        r.margin3 = r.rhs - r.lhs
        r.scale = max(abs(r.lhs), const.Cprime * abs(r.u), abs(r.w), const.C * (abs(r.energy) + abs(const.c)),
                      1e-300)
        r.passed = min(r.margin1, r.margin2, r.margin3) >= -tol * r.scale
    report = QeiReport(config_id, const, rows, tol)
    if raise_on_failure and not report.passed:
        bad = report.failures()[0]
        raise BoundViolation(f"QEI margin violated for state {bad.state_id}",
                             {"config_id": config_id, "row": asdict(bad), "constants": const.as_dict()})
    return report


def run_setup(setup: QeiSetup, states: Sequence[StateSpec], **kw) -> QeiReport:
    _, f, F, atlas, basis = setup.build()
    return qei_verify(states, f, F, basis, setup.l, atlas, **kw)


# ---------------------------------------------------------------------------
# classical-energy bound


@dataclass
class ClassicalRow:
    state_id: int
    state: dict
    stress: float
    classical: float
    difference: float
    slack: float
    scale: float
    passed: bool


@dataclass
class ClassicalReport:
    c: float
    rows: List[ClassicalRow]
    tol: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


def classical_energy(phi: ClassicalSolution, F: TestFunction) -> float:
    """Grid quadrature of ``T_00[phi] F^2``."""
    tt, xx = F.grid.mesh
    return float(np.sum(energy_density(phi, tt, xx) * np.real(F.values) ** 2) * F.grid.w_site)


def classical_qei(states: Sequence[StateSpec], F: TestFunction, basis: ModeBasis, c: float,
                  tol: float = 1e-6) -> ClassicalReport:
    """Compare ``w(T(F^2))`` with ``int T_00[w1] F^2`` for coherent states.

    With the vacuum as reference the truncated state is the vacuum, so the two
    agree up to quadrature and the bound ``w(T) >= -c + int T_00 F^2`` holds
    with slack ``c``.
    """
    rows = []
    for i, st in enumerate(states):
        if not isinstance(st, Coherent):
            raise TypeError("classical_qei takes coherent states only")
        phi = ClassicalSolution.from_state(st, basis.m, basis.L)
        E = stress_expectation(st, F, basis)
        K = classical_energy(phi, F)
        scale = max(abs(E), abs(K), 1e-300)
        diff = E - K
        slack = E + c - K
        rows.append(ClassicalRow(i, st.descriptor(), E, K, diff, slack, scale,
                                 abs(diff) <= tol * max(scale, 1.0) and slack >= -tol * max(scale, 1.0)))
    return ClassicalReport(c, rows, tol)


# ---------------------------------------------------------------------------
# regions of the pointwise bound


@dataclass(frozen=True)
class RegionSpec:
    """Regions around the base point ``(t0, x0)`` at scale ``R``.

    ``W = {|t - t0| < R, |x - x0| < 3R}``, the slices ``V_t`` are arcs of radius
    ``R + 2|t - t0|`` and ``V_0`` is the arc of radius ``R``.  Arcs reaching
    round the circle are clamped to the full circle and flagged.
    """

    t0: float
    x0: float
    R: float
    L: float
    grid: Optional[SpacetimeGrid] = None

    def radius(self, dt: float) -> float:
        return self.R + 2.0 * abs(dt)

    def clamped(self, radius: float) -> bool:
        return 2.0 * radius >= self.L

    @property
    def slice_clamped(self) -> bool:
        return self.clamped(self.R)

    @property
    def slice_length(self) -> float:
        return self.L if self.slice_clamped else 2.0 * self.R

    def slice_rule(self, radius: float, n: int = 96):
        """Quadrature nodes and weights over the arc of the given radius around ``x0``."""
        if self.clamped(radius):
            x = self.x0 + np.arange(n) * self.L / n
            return x, np.full(n, self.L / n)
        y, w = leggauss(n)
        return self.x0 + radius * y, radius * w

    def slice_energy(self, phi: ClassicalSolution, dt: float = 0.0, radius: Optional[float] = None,
                     n: int = 96) -> float:
        r = self.radius(dt) if radius is None else radius
        x, w = self.slice_rule(r, n)
        return float(np.sum(energy_density(phi, self.t0 + dt, x) * w))

    def region_energy(self, phi: ClassicalSolution, n_t: int = 48, n_x: int = 96) -> float:
        """``int_W T_00`` by tensor Gauss-Legendre quadrature."""
        y, wt = leggauss(n_t)
        total = 0.0
        for s, ws in zip(self.R * y, self.R * wt):
            total += ws * self.slice_energy(phi, s, 3.0 * self.R, n_x)
        return float(total)

    # -- grid masks ---------------------------------------------------------
    def _offsets(self):
        tt, xx = self.grid.mesh
        return tt - self.t0, np.abs(self.grid.circular_offset(xx, self.x0))

    def mask_W(self) -> np.ndarray:
        dt, dx = self._offsets()
        return (np.abs(dt) < self.R) & (dx < 3.0 * self.R)

    def mask_V(self, sign: int) -> np.ndarray:
        dt, dx = self._offsets()
        s = sign * dt
        return (s > 0) & (s < self.R) & (dx < self.R + 2.0 * np.abs(dt))

    def area_W(self) -> float:
        return 2.0 * self.R * min(6.0 * self.R, self.L)

    def area_V(self) -> float:
        y, w = leggauss(64)
        s = 0.5 * self.R * (y + 1.0)
        return float(np.sum(0.5 * self.R * w * np.minimum(2.0 * (self.R + 2.0 * s), self.L)))


def make_regions(x: Tuple[float, float], R: float, grid: SpacetimeGrid) -> RegionSpec:
    t0, x0 = x
    if not R > 0:
        raise GridError("scale R must be positive")
    if t0 - R <= -grid.T or t0 + R >= grid.T:
        raise GridError(f"R={R} too large: the region leaves the time window")
    return RegionSpec(float(t0), float(x0), float(R), grid.L, grid)


@dataclass(frozen=True)
class EnergyEstimate:
    C0_emp: float
    ratios: Tuple[float, ...]
    verdict: str
    degenerate: bool


def energy_estimate_check(phi: ClassicalSolution, regions: RegionSpec, n_times: int = 16,
                          C0: float = 1.0, tol: float = 1e-6) -> EnergyEstimate:
    """Largest ratio ``int_{V_0} T_00 / int_{V_t} T_00`` over sample times in ``(-R, 0) u (0, R)``."""
    offs = regions.R * (np.arange(1, n_times + 1) / (n_times + 1))
    offs = np.concatenate([-offs[::-1], offs])
    E0 = regions.slice_energy(phi)
    Et = np.array([regions.slice_energy(phi, s) for s in offs])
    if E0 == 0.0 and np.all(Et == 0.0):
        return EnergyEstimate(1.0, tuple(np.ones(len(offs))), "degenerate", True)
    if np.any(Et <= 0.0):
        raise ValueError("degenerate slice: zero energy on V_t with nonzero energy on V_0")
    ratios = E0 / Et
    c0 = float(ratios.max())
    return EnergyEstimate(c0, tuple(float(r) for r in ratios),
                          "bounded" if c0 <= C0 * (1.0 + tol) else "violated", False)


def morrey_constant(m: float, length: float, full_circle: bool) -> float:
    """Sup-norm constant on an arc from the Neumann Green's function of ``1 - d^2``.

    ``sup |phi|^2 <= coth(length) int (phi'^2 + phi^2)`` on an interval and
    ``1/2 coth(L/2)`` on the whole circle; the energy density dominates
    ``1/2 min(1, m^2) (phi'^2 + phi^2)`` at fixed time.
    """
    k = 0.5 / np.tanh(0.5 * length) if full_circle else 1.0 / np.tanh(length)
    return 2.0 / min(1.0, m * m) * k


@dataclass(frozen=True)
class MorreyCheck:
    sup2: float
    slice_energy: float
    ratio: float
    C4: float
    verdict: str


def _slice_sup2(phi: ClassicalSolution, regions: RegionSpec, n: int = 2001) -> float:
    if regions.slice_clamped:
        lo, hi = regions.x0, regions.x0 + regions.L
    else:
        lo, hi = regions.x0 - regions.R, regions.x0 + regions.R
    xs = np.linspace(lo, hi, n)
    vals = phi(regions.t0, xs) ** 2
    j = int(np.argmax(vals))
    best = float(vals[j])
    a, b = xs[max(j - 1, 0)], xs[min(j + 1, n - 1)]
    if b > a:
        res = minimize_scalar(lambda s: -phi(regions.t0, s) ** 2, bounds=(a, b), method="bounded",
                              options={"xatol": 1e-12})
        best = max(best, float(-res.fun))
    return best


def morrey_bound(phi: ClassicalSolution, regions: RegionSpec, m: Optional[float] = None) -> MorreyCheck:
    """``sup_{V_0} |phi|^2 / int_{V_0} T_00`` against :func:`morrey_constant`."""
    m = phi.m if m is None else m
    C4 = morrey_constant(m, regions.slice_length, regions.slice_clamped)
    sup2 = _slice_sup2(phi, regions)
    E = regions.slice_energy(phi)
    if E <= 0.0:
        if sup2 > 0.0:
            raise ValueError("inconsistent slice: zero energy with nonzero field")
        return MorreyCheck(sup2, E, 0.0, C4, "trivial")
    ratio = sup2 / E
    return MorreyCheck(sup2, E, ratio, C4, "holds" if ratio <= C4 else "violated")


# ---------------------------------------------------------------------------
# the pointwise bound


@dataclass
class PointwiseRow:
    state_id: int
    state: dict
    abs_phi: float
    slice_energy: float
    region_energy: float
    smeared_classical: float
    stress: float
    rhs: float
    link_prop: bool
    link_energy: bool
    link_region: bool
    link_morrey: bool
    link_final: bool
    margin: float
    passed: bool


@dataclass
class PointwiseReport:
    point: Tuple[float, float]
    R: float
    constants: dict
    clamped: bool
    rows: List[PointwiseRow]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def as_dict(self) -> dict:
        return {"point": list(self.point), "R": self.R, "constants": self.constants,
                "clamped": self.clamped, "passed": self.passed, "rows": [asdict(r) for r in self.rows]}


def pointwise_constants(R: float, m: float, L: float, c_prop: float) -> dict:
    """Constants of the chain: ``C = C4 / C2`` and ``c = c_prop + 1/C``."""
    clamped = 2.0 * R >= L
    C0, C1 = 1.0, 1.0
    C2 = 2.0 * R / C0
    C4 = morrey_constant(m, L if clamped else 2.0 * R, clamped)
    C = C4 / C2
    return dict(C0=C0, C1=C1, C2=C2, C4=C4, c_prop=c_prop, C=C, c=c_prop + 1.0 / C)


def pointwise_verify(states: Sequence[StateSpec], x: Tuple[float, float], F: TestFunction,
                     basis: ModeBasis, R: float, c_prop: float, tol: float = 1e-6,
                     c_override: Optional[float] = None, raise_on_failure: bool = True) -> PointwiseReport:
    """Chain the classical-energy bound, the energy estimate and the sup-norm bound into
    ``|w1(x)| <= C (w(T(F^2)) + c)`` with one ``(C, c)`` for all states."""
    regions = make_regions(x, R, F.grid)
    inW = regions.mask_W()
    if np.any(np.abs(np.real(F.values[inW]) - 1.0) > 1e-12):
        raise GridError("F must equal 1 on the region W")
    const = pointwise_constants(R, basis.m, basis.L, c_prop)
    if c_override is not None:
        const["c"] = float(c_override)
    C, c = const["C"], const["c"]
    rows = []
    for i, st in enumerate(states):
        E = stress_expectation(st, F, basis)
        if isinstance(st, Coherent):
            phi = ClassicalSolution.from_state(st, basis.m, basis.L)
            a = float(abs(phi(*x)))
            E0 = regions.slice_energy(phi)
            EW = regions.region_energy(phi)
            K = classical_energy(phi, F)
        else:
            a = E0 = EW = K = 0.0
        s = max(abs(E), abs(K), abs(c_prop), 1.0)
        link_prop = K <= E + c_prop + tol * s
        link_energy = 2.0 * R * E0 <= const["C0"] * EW * (1.0 + tol) + tol * s
        link_region = EW <= const["C1"] * K * (1.0 + tol) + tol * s
        link_morrey = a * a <= const["C4"] * E0 * (1.0 + tol) + tol * s
        rhs = C * (E + c)
        margin = rhs - a
        final = margin >= -tol * max(rhs, a, 1.0)
        rows.append(PointwiseRow(i, st.descriptor(), a, E0, EW, K, E, rhs, bool(link_prop), bool(link_energy),
                                 bool(link_region), bool(link_morrey), bool(final), margin,
                                 bool(link_prop and link_energy and link_region and link_morrey and final)))
    report = PointwiseReport(tuple(x), R, const, regions.slice_clamped, rows)
    if raise_on_failure and not report.passed:
        bad = next(r for r in rows if not r.passed)
        raise BoundViolation(f"pointwise bound violated for state {bad.state_id}",
                             {"row": asdict(bad), "constants": const})
    return report
