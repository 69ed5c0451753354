"""Mode sums for the massive free scalar field on the cylinder.

Mode functions are ``e_n(t, x) = exp(-i w_n t + i k_n x)`` with
``k_n = 2 pi n / L`` and ``w_n = sqrt(k_n^2 + m^2)``, normalised by
``(2 w_n L)^(-1/2)``.  Every state handled here has a two-point function of the form

    sum_n c_n [(1 + N_n) e_n(x) conj(e_n(y)) + N_n conj(e_n(x)) e_n(y)] + phi(x) phi(y)

with ``c_n = 1 / (2 w_n L)``, occupations ``N_n`` (Bose factors for thermal
states, integers for number states) and a real classical solution ``phi``
for coherent states.  Renormalisation subtracts the vacuum.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from . import _accel
from .errors import CutoffError, GridMismatchError
from .grid import SpacetimeGrid, Spectrum, TestFunction
from .kernels import KernelMatrix

BOLTZMANN_TAIL = 1e-12


# ---------------------------------------------------------------------------
# modes and states


@dataclass(frozen=True)
class ModeBasis:
    m: float
    L: float
    N_max: int

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if not self.L > 0:
            raise ValueError("circumference must be positive")
        if int(self.N_max) != self.N_max or self.N_max < 0:
            raise ValueError("N_max must be a non-negative integer")

    @property
    def n(self) -> np.ndarray:
        return np.arange(-self.N_max, self.N_max + 1)

    @property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * self.n / self.L

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.k ** 2 + self.m ** 2)

    @property
    def c(self) -> np.ndarray:
        return 1.0 / (2.0 * self.omega * self.L)

    def index(self, n: int) -> int:
        if abs(n) > self.N_max:
            raise CutoffError(f"mode {n} outside the basis |n| <= {self.N_max}")
        return int(n) + self.N_max

    def refined(self, factor: int = 2) -> "ModeBasis":
        return ModeBasis(self.m, self.L, self.N_max * factor)


class StateSpec:
    """Base class of the four state families."""

    kind = "state"

    def descriptor(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Vacuum(StateSpec):
    kind = "vacuum"

    def descriptor(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Thermal(StateSpec):
    beta: float
    kind = "thermal"

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("inverse temperature must be positive")

    def descriptor(self):
        return {"kind": self.kind, "beta": self.beta}


@dataclass(frozen=True)
class Coherent(StateSpec):
    """Coherent state with mode amplitudes ``((n, a_n), ...)``."""

    amplitudes: Tuple[Tuple[int, complex], ...]
    kind = "coherent"

    @classmethod
    def zero_mode(cls, A: float, m: float, L: float) -> "Coherent":
        """Amplitude giving the one-point function ``A cos(m t)``."""
        return cls(((0, complex(A * np.sqrt(m * L / 2.0))),))

    def descriptor(self):
        return {"kind": self.kind,
                "amplitudes": [[int(n), [complex(a).real, complex(a).imag]] for n, a in self.amplitudes]}


@dataclass(frozen=True)
class Particles(StateSpec):
    """Number eigenstate with occupations ``((n, N_n), ...)``."""

    occupations: Tuple[Tuple[int, int], ...]
    kind = "particles"

    def __post_init__(self):
        if any(int(q) != q or q < 0 for _, q in self.occupations):
            raise ValueError("occupations must be non-negative integers")

    def descriptor(self):
        return {"kind": self.kind, "occupations": [[int(n), int(q)] for n, q in self.occupations]}


def state_from_descriptor(d: dict) -> StateSpec:
    kind = d["kind"]
    if kind == "vacuum":
        return Vacuum()
    if kind == "thermal":
        return Thermal(float(d["beta"]))
    if kind == "coherent":
        return Coherent(tuple((int(n), complex(a[0], a[1])) for n, a in d["amplitudes"]))
    if kind == "particles":
        return Particles(tuple((int(n), int(q)) for n, q in d["occupations"]))
    raise ValueError(f"unknown state kind {kind!r}")


def bose(beta: float, omega):
    return 1.0 / np.expm1(beta * np.asarray(omega))


def occupations(state: StateSpec, basis: ModeBasis) -> np.ndarray:
    """Mode occupations ``N_n`` over the basis (zero for vacuum and coherent states)."""
    N = np.zeros(2 * basis.N_max + 1)
    if isinstance(state, Thermal):
        if np.exp(-state.beta * basis.omega[-1]) > BOLTZMANN_TAIL:
            raise CutoffError(
                f"N_max={basis.N_max} too small for beta={state.beta}: "
                f"exp(-beta w_N) = {np.exp(-state.beta * basis.omega[-1]):.2e}")
        N = bose(state.beta, basis.omega)
    elif isinstance(state, Particles):
        for n, q in state.occupations:
            N[basis.index(n)] += q
    return N


def required_cutoff(beta: float, m: float, L: float) -> int:
    """Smallest ``N_max`` with ``exp(-beta w_N) <= 1e-12``."""
    w_needed = -np.log(BOLTZMANN_TAIL) / beta
    k_needed = np.sqrt(max(w_needed ** 2 - m ** 2, 0.0))
    return int(np.ceil(k_needed * L / (2 * np.pi)))


# ---------------------------------------------------------------------------
# classical solutions


@dataclass(frozen=True, eq=False)
class ClassicalSolution:
    """Real solution ``sum_n (2 w_n L)^(-1/2) 2 Re(a_n e_n)`` of the Klein-Gordon equation."""

    m: float
    L: float
    amplitudes: Tuple[Tuple[int, complex], ...]

    @cached_property
    def _modes(self):
        ns = np.array([n for n, _ in self.amplitudes], dtype=float)
        a = np.array([a for _, a in self.amplitudes], dtype=complex)
        k = 2.0 * np.pi * ns / self.L
        w = np.sqrt(k ** 2 + self.m ** 2)
        return ns, a, k, w

    @classmethod
    def zero_mode(cls, A: float, m: float, L: float) -> "ClassicalSolution":
        return cls(m, L, Coherent.zero_mode(A, m, L).amplitudes)

    @classmethod
    def from_state(cls, state: Coherent, m: float, L: float) -> "ClassicalSolution":
        return cls(m, L, tuple(state.amplitudes))

    def _phases(self, t, x):
        _, a, k, w = self._modes
        t = np.asarray(t, dtype=float)[..., None]
        x = np.asarray(x, dtype=float)[..., None]
        alpha = a / np.sqrt(2.0 * w * self.L)
        return alpha * np.exp(-1j * w * t + 1j * k * x), k, w

    def __call__(self, t, x):
        z, _, _ = self._phases(t, x)
        return 2.0 * np.real(z.sum(axis=-1))

    def gradient(self, t, x):
        """``(d_t phi, d_x phi)``."""
        z, k, w = self._phases(t, x)
        return 2.0 * np.real((-1j * w * z).sum(axis=-1)), 2.0 * np.real((1j * k * z).sum(axis=-1))

    def energy(self) -> float:
        """Conserved energy ``sum_n |a_n|^2 w_n`` (integral of the energy density over a slice)."""
        _, a, _, w = self._modes
        return float(np.sum(np.abs(a) ** 2 * w))

    def plane_waves(self):
        """``(beta, nu, kappa)`` with ``phi = sum_r beta_r exp(-i nu_r t + i kappa_r x)``."""
        _, a, k, w = self._modes
        alpha = a / np.sqrt(2.0 * w * self.L)
        return (np.concatenate([alpha, alpha.conj()]), np.concatenate([w, -w]),
                np.concatenate([k, -k]))

    def on_grid(self, grid: SpacetimeGrid) -> np.ndarray:
        tt, xx = grid.mesh
        return self(tt, xx)

    def gradient_on_grid(self, grid: SpacetimeGrid):
        tt, xx = grid.mesh
        return self.gradient(tt, xx)


def random_solution(rng: np.random.Generator, m: float, L: float, n_modes: int = 5,
                    max_mode: int = 5, amplitude: float = 1.0) -> ClassicalSolution:
    """Solution with ``n_modes`` distinct random modes and complex amplitudes of size <= ``amplitude``."""
    ns = rng.choice(np.arange(-max_mode, max_mode + 1), size=n_modes, replace=False)
    mags = amplitude * rng.uniform(0.1, 1.0, size=n_modes)
    phases = rng.uniform(0, 2 * np.pi, size=n_modes)
    return ClassicalSolution(m, L, tuple((int(n), complex(r * np.exp(1j * p)))
                                         for n, r, p in zip(ns, mags, phases)))


def classical_stress(phi: ClassicalSolution, t, x) -> np.ndarray:
    """``T_mn = d_m phi d_n phi - 1/2 g_mn (|grad phi|^2 - m^2 phi^2)`` with ``g = diag(1, -1)``.

    Returns an array of shape ``(..., 2, 2)``.
    """
    p = phi(t, x)
    pt, px = phi.gradient(t, x)
    lag = pt * pt - px * px - phi.m ** 2 * p * p
    out = np.empty(np.shape(p) + (2, 2))
    out[..., 0, 0] = pt * pt - 0.5 * lag
    out[..., 0, 1] = out[..., 1, 0] = pt * px
    out[..., 1, 1] = px * px + 0.5 * lag
    return out


def energy_density(phi: ClassicalSolution, t, x) -> np.ndarray:
    """``T_00 = 1/2 (phi_t^2 + phi_x^2 + m^2 phi^2)``."""
    p = phi(t, x)
    pt, px = phi.gradient(t, x)
    return 0.5 * (pt * pt + px * px + phi.m ** 2 * p * p)


# ---------------------------------------------------------------------------
# smeared overlaps


def mode_overlaps(values: np.ndarray, grid: SpacetimeGrid, basis: ModeBasis):
    """``(M, P)`` with ``M_n = sum f conj(e_n) w`` and ``P_n = sum f e_n w``."""
    if grid.L != basis.L:
        raise GridMismatchError("grid circumference differs from the mode basis")
    ex = np.exp(1j * np.outer(grid.x, basis.k))            # (Nx, modes)
    et = np.exp(1j * np.outer(grid.t, basis.omega))        # (Nt, modes)
    minus = values @ ex.conj()                             # sum_x f e^{-ikx}
    plus = values @ ex
    M = np.einsum("in,in->n", et, minus) * grid.w_site
    P = np.einsum("in,in->n", et.conj(), plus) * grid.w_site
    return M, P


def _plane_wave_gram(weight: np.ndarray, grid: SpacetimeGrid, nu, kappa) -> np.ndarray:
    """``G_rs = sum weight psi_r conj(psi_s) w`` for plane waves ``psi_r = exp(-i nu_r t + i kappa_r x)``."""
    dn = nu[:, None] - nu[None, :]
    dk = kappa[:, None] - kappa[None, :]
    freqs = np.stack([dn.ravel(), -dk.ravel()], axis=1)
    vals = _accel.direct_transform(grid.coords, weight.ravel(), freqs) * grid.w_site
    return vals.reshape(dn.shape)


# ---------------------------------------------------------------------------
# two-point functions


@dataclass(frozen=True, eq=False)
class TwoPoint:
    """Mode-sum evaluator of a state's two-point function."""

    state: StateSpec
    basis: ModeBasis
    N: np.ndarray
    phi: Optional[ClassicalSolution] = None

    @property
    def c_pos(self) -> np.ndarray:
        return self.basis.c * (1.0 + self.N)

    @property
    def c_neg(self) -> np.ndarray:
        return self.basis.c * self.N

    def truncated(self) -> "TwoPoint":
        """``w2 - w1 x w1``."""
        return TwoPoint(self.state, self.basis, self.N, None)

    def pair(self, f: TestFunction, h: TestFunction, tail_tol: Optional[float] = 1e-8) -> complex:
        """``sum conj(f_a) w2(a, b) h_b w_a w_b`` by mode sums."""
        if f.grid != h.grid:
            raise GridMismatchError("test functions live on different grids")
        grid = f.grid
        Mf, Pf = mode_overlaps(f.values, grid, self.basis)
        Mh, Ph = mode_overlaps(h.values, grid, self.basis)
        terms = self.c_pos * np.conj(Mf) * Mh + self.c_neg * np.conj(Pf) * Ph
        if tail_tol is not None and self.basis.N_max > 0:
            total = np.sum(np.abs(terms))
            tail = np.abs(terms[0]) + np.abs(terms[-1])
            if total > 0 and tail > tail_tol * total:
                raise CutoffError(f"mode sum not converged: edge share {tail / total:.2e}")
        out = complex(terms.sum())
        if self.phi is not None:
            p = self.phi.on_grid(grid)
            out += np.conj(np.sum(f.values * p)) * np.sum(p * h.values) * grid.w_site ** 2
        return out

    def kernel(self, grid: SpacetimeGrid) -> KernelMatrix:
        """Dense density ``w2(a, b)`` sampled on ``grid``."""
        if grid.L != self.basis.L:
            raise GridMismatchError("grid circumference differs from the mode basis")
        c = grid.coords
        data = _accel.mode_kernel(c[:, 0], c[:, 1], self.basis.omega, self.basis.k, self.c_pos, self.c_neg)
        if self.phi is not None:
            p = self.phi.on_grid(grid).ravel()
            data = data + np.outer(p, p)
        return KernelMatrix(data, grid, True)


def two_point(state: StateSpec, basis: ModeBasis, grid: Optional[SpacetimeGrid] = None):
    """``(evaluator, kernel)``; the dense kernel is only sampled when ``grid`` is given."""
    N = occupations(state, basis)
    phi = None
    if isinstance(state, Coherent):
        for n, _ in state.amplitudes:
            basis.index(n)
        phi = ClassicalSolution.from_state(state, basis.m, basis.L)
    ev = TwoPoint(state, basis, N, phi)
    return ev, (ev.kernel(grid) if grid is not None else None)


def commutator(f: TestFunction, h: TestFunction, basis: ModeBasis) -> complex:
    """Smeared ``iE(f, h)``: antisymmetric part of the vacuum two-point function."""
    vac, _ = two_point(Vacuum(), basis)
    return vac.pair(f, h, None) - vac.pair(h, f, None)


def one_point(state: StateSpec, t, x, basis: Optional[ModeBasis] = None, m: float = None, L: float = None):
    """``w1`` at ``(t, x)``: the classical solution for coherent states, zero otherwise."""
    if isinstance(state, Coherent):
        if basis is not None:
            m, L = basis.m, basis.L
        return ClassicalSolution.from_state(state, m, L)(t, x)
    return np.zeros(np.broadcast(np.asarray(t), np.asarray(x)).shape)


def smeared_field_square(state: StateSpec, f: TestFunction, basis: ModeBasis,
                         tail_tol: Optional[float] = 1e-8) -> float:
    """``w(phi(f)^2)`` for real ``f``."""
    if np.iscomplexobj(f.values) and np.any(np.abs(np.imag(f.values)) > 0):
        raise ValueError("f must be real")
    ev, _ = two_point(state, basis)
    val = ev.pair(f, f, tail_tol)
    if abs(val.imag) > 1e-10 * max(abs(val), 1e-300):
        raise ArithmeticError("smeared field square is not real")
    return val.real


def _coherent_quadratic(phi: ClassicalSolution, weight: np.ndarray, grid: SpacetimeGrid, derivative: bool):
    beta, nu, kappa = phi.plane_waves()
    G = _plane_wave_gram(weight, grid, nu, kappa)
    coef = np.outer(beta, beta.conj())
    if derivative:
        coef = 0.5 * coef * (np.outer(nu, nu) + np.outer(kappa, kappa) + phi.m ** 2)
    return float(np.real(np.sum(coef * G)))


def wick_square(state: StateSpec, g: TestFunction, basis: ModeBasis) -> float:
    """Vacuum-subtracted ``int g :phi^2:``."""
    gv = np.real(g.values)
    N = occupations(state, basis)
    val = float(np.sum(N / (basis.omega * basis.L))) * float(gv.sum() * g.grid.w_site)
    if isinstance(state, Coherent):
        val += _coherent_quadratic(ClassicalSolution.from_state(state, basis.m, basis.L), gv, g.grid, False)
    return val


def stress_expectation(state: StateSpec, F: TestFunction, basis: ModeBasis) -> float:
    """Vacuum-subtracted ``int F^2 T_00`` by point splitting on mode sums.

    The split operator ``1/2 (d_t d_t' + d_x d_x' + m^2)`` gives
    ``N_n w_n / L`` per mode and the classical energy density of the
    one-point function.
    """
    F2 = np.real(F.values) ** 2
    N = occupations(state, basis)
    val = float(np.sum(N * basis.omega / basis.L)) * float(F2.sum() * F.grid.w_site)
    if isinstance(state, Coherent):
        val += _coherent_quadratic(ClassicalSolution.from_state(state, basis.m, basis.L), F2, F.grid, True)
    return val


def localized_two_point_spectrum(ev: TwoPoint, localizer: TestFunction):
    """Lattice transform of ``B(x) B(y) w2(x, y)`` over the 4-d frequency lattice.

    Returns a :class:`qeilab.grid.Spectrum` with axes ``(w, k, w', k')``; only
    the mode-sum part of the two-point function enters.
    """
    g = localizer.grid
    tt, xx = g.mesh
    phase = np.exp(-1j * g.omega * g.t[0])[:, None]
    B = localizer.values
    rows, cols = [], []
    for w, k in zip(ev.basis.omega, ev.basis.k):
        e = np.exp(-1j * w * tt + 1j * k * xx)
        rows.append((np.fft.fft2(B * e) * phase * g.w_site).ravel())
        cols.append((np.fft.fft2(B * e.conj()) * phase * g.w_site).ravel())
    A, C = np.array(rows), np.array(cols)
    W = (A.T * ev.c_pos) @ C + (C.T * ev.c_neg) @ A
    n = (g.Nt, g.Nx)
    return Spectrum(W.reshape(n + n), (g.omega, g.k, g.omega, g.k), g.cell ** 2)
