"""Sampling grids on the cylinder, smooth test functions and discrete Fourier analysis.

Conventions used throughout the package:

* sites ``(t_i, x_j)`` with ``t_i = -T + (i + 1/2) dt`` and ``x_j = j dx``; the
  flat site index is ``a = i * Nx + j``;
* every site carries the quadrature weight ``w = dt * dx``;
* ``fhat(w_m, k_n) = sum_sites f(t, x) exp(-i (w_m t + k_n x)) w`` on the
  lattice ``w_m = 2 pi m / (2T)``, ``k_n = 2 pi n / L`` (numpy fft ordering);
* Parseval reads ``sum |f|^2 w = sum |fhat|^2 / (2T L)``, i.e. the frequency
  measure is the lattice cell ``(2 pi)^2 / (2T L)`` divided by ``(2 pi)^2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from . import _accel
from .errors import GridError, UnresolvedScaleError

Interval = Tuple[float, float]


@dataclass(frozen=True)
class SpacetimeGrid:
    """Uniform grid on the time window ``(-T, T)`` times a circle of circumference ``L``.

    The metric signature is ``diag(+1, -1)`` on ``(t, x)``.
    """

    L: float
    T: float
    Nt: int
    Nx: int

    def __post_init__(self):
        if not (self.L > 0 and self.T > 0):
            raise GridError(f"extents must be positive, got L={self.L}, T={self.T}")
        for name in ("Nt", "Nx"):
            n = getattr(self, name)
            if int(n) != n or n < 8 or n % 2:
                raise GridError(f"{name} must be an even integer >= 8, got {n}")

    signature = (1.0, -1.0)

    @property
    def dt(self) -> float:
        return 2.0 * self.T / self.Nt

    @property
    def dx(self) -> float:
        return self.L / self.Nx

    @property
    def w_site(self) -> float:
        return self.dt * self.dx

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.Nt, self.Nx)

    @property
    def n_sites(self) -> int:
        return self.Nt * self.Nx

    @cached_property
    def t(self) -> np.ndarray:
        return -self.T + (np.arange(self.Nt) + 0.5) * self.dt

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.Nx) * self.dx

    @cached_property
    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.t, self.x, indexing="ij")

    @cached_property
    def coords(self) -> np.ndarray:
        tt, xx = self.mesh
        return np.stack([tt.ravel(), xx.ravel()], axis=1)

    @cached_property
    def omega(self) -> np.ndarray:
        """Time-frequency lattice in fft order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.Nt, d=self.dt)

    @cached_property
    def k(self) -> np.ndarray:
        """Spatial-frequency lattice in fft order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.Nx, d=self.dx)

    @property
    def cell(self) -> float:
        """Frequency-lattice cell volume."""
        return (np.pi / self.T) * (2.0 * np.pi / self.L)

    def refined(self, factor: int) -> "SpacetimeGrid":
        return SpacetimeGrid(self.L, self.T, self.Nt * factor, self.Nx * factor)

    def circular_offset(self, x, center):
        """Signed periodic distance ``x - center`` folded into ``[-L/2, L/2)``."""
        return (np.asarray(x) - center + 0.5 * self.L) % self.L - 0.5 * self.L


def make_grid(L: float, T: float, Nt: int, Nx: int) -> SpacetimeGrid:
    return SpacetimeGrid(float(L), float(T), int(Nt), int(Nx))


@dataclass(frozen=True)
class LineGrid:
    """Periodic one-dimensional grid ``x_j = -P/2 + j dx`` (node ``N/2`` sits at 0)."""

    P: float
    N: int

    def __post_init__(self):
        if not self.P > 0:
            raise GridError("period must be positive")
        if int(self.N) != self.N or self.N < 8 or self.N % 2:
            raise GridError(f"N must be an even integer >= 8, got {self.N}")

    @property
    def dx(self) -> float:
        return self.P / self.N

    @cached_property
    def x(self) -> np.ndarray:
        return -0.5 * self.P + np.arange(self.N) * self.dx

    @cached_property
    def k(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)

    @property
    def cell(self) -> float:
        return 2.0 * np.pi / self.P


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Samples of a test function on a grid, with its declared support box.

    ``support`` is ``((t_lo, t_hi), (x_lo, x_hi))``; the spatial arc is ``None``
    for functions supported on the whole circle.  Arcs may extend past ``[0, L)``
    and are understood modulo ``L``.
    """

    __test__ = False  # not a pytest class

    grid: SpacetimeGrid
    values: np.ndarray
    support: Tuple[Interval, Optional[Interval]]
    params: dict = field(default_factory=dict)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    @property
    def coords(self) -> np.ndarray:
        return self.grid.coords

    @property
    def weight(self) -> float:
        return self.grid.w_site

    def quadrature(self) -> complex:
        return self.values.sum() * self.grid.w_site

    def with_values(self, values, support=None, **params) -> "TestFunction":
        return TestFunction(self.grid, np.asarray(values), support or self.support, {**self.params, **params})

    def __mul__(self, other):
        if isinstance(other, TestFunction):
            (ta, xa), (tb, xb) = self.support, other.support
            t = (max(ta[0], tb[0]), min(ta[1], tb[1]))
            x = xa if xb is None else xb if xa is None else xa
            return TestFunction(self.grid, self.values * other.values, (t, x))
        return self.with_values(self.values * other)

    __rmul__ = __mul__

    def in_support(self) -> np.ndarray:
        """Boolean mask of grid nodes inside the declared support box."""
        (t0, t1), arc = self.support
        tt, xx = self.grid.mesh
        mask = (tt >= t0) & (tt <= t1)
        if arc is not None:
            c = 0.5 * (arc[0] + arc[1])
            mask &= np.abs(self.grid.circular_offset(xx, c)) <= 0.5 * (arc[1] - arc[0])
        return mask


@dataclass(frozen=True, eq=False)
class LineFunction:
    grid: LineGrid
    values: np.ndarray

    @property
    def coords(self) -> np.ndarray:
        return self.grid.x[:, None]

    @property
    def flat(self) -> np.ndarray:
        return self.values

    @property
    def weight(self) -> float:
        return self.grid.dx


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Lattice transform: ``values`` indexed like ``np.meshgrid(*axes, indexing='ij')``."""

    values: np.ndarray
    axes: Tuple[np.ndarray, ...]
    cell: float

    @cached_property
    def kvecs(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


# ---------------------------------------------------------------------------
# smooth functions


def bump_profile(rho):
    """Peak-normalised standard bump ``e * exp(-1/(1 - rho^2))`` (zero for rho >= 1)."""
    rho = np.asarray(rho, dtype=float)
    out = np.zeros_like(rho)
    inside = rho < 1.0
    r2 = rho[inside] ** 2
    out[inside] = np.exp(-r2 / (1.0 - r2))
    return out


def smooth_step(y):
    """C-infinity step: 0 for y <= 0, 1 for y >= 1, monotone in between."""
    y = np.asarray(y, dtype=float)
    out = np.where(y >= 1.0, 1.0, 0.0)
    mid = (y > 0.0) & (y < 1.0)
    ym = y[mid]
    a = np.exp(-1.0 / ym)
    b = np.exp(-1.0 / (1.0 - ym))
    out[mid] = a / (a + b)
    return out


def _check_time_interval(grid, lo, hi, what):
    if lo <= -grid.T or hi >= grid.T:
        raise GridError(f"{what} [{lo}, {hi}] leaks out of the time window (-{grid.T}, {grid.T})")


def bump(grid: SpacetimeGrid, center, radii, spatial_constant: bool = False,
         normalize_peak: bool = True) -> TestFunction:
    """Radial bump of scaled radius ``rho`` around ``center = (t0, x0)``.

    With ``spatial_constant`` only the time radius is used and the function is
    constant along the circle.
    """
    t0, x0 = center
    rt = radii[0] if np.ndim(radii) else radii
    _check_time_interval(grid, t0 - rt, t0 + rt, "bump support")
    tt, xx = grid.mesh
    if spatial_constant:
        rho = np.abs(tt - t0) / rt
        arc = None
    else:
        rx = radii[1]
        if 2 * rx >= grid.L:
            raise GridError("spatial radius must be below L/2; use spatial_constant instead")
        rho = np.hypot((tt - t0) / rt, grid.circular_offset(xx, x0) / rx)
        arc = (x0 - rx, x0 + rx)
    values = bump_profile(rho)
    if not normalize_peak:
        values = values * np.exp(-1.0)
    params = dict(kind="bump", center=(t0, x0), radii=tuple(np.atleast_1d(radii)),
                  spatial_constant=spatial_constant, normalize_peak=normalize_peak)
    return TestFunction(grid, values, ((t0 - rt, t0 + rt), arc), params)


def _plateau_1d(u, inner, outer):
    lo = smooth_step((u - outer[0]) / (inner[0] - outer[0]))
    hi = smooth_step((outer[1] - u) / (outer[1] - inner[1]))
    return lo * hi


def plateau(grid: SpacetimeGrid, inner_box, outer_box) -> TestFunction:
    """Smooth ``F`` with ``F = 1`` on ``inner_box``, ``F = 0`` off ``outer_box``, ``0 <= F <= 1``.

    Boxes are ``((t_lo, t_hi), arc)`` with ``arc`` ``None`` for the full circle.
    """
    (it, ix), (ot, ox) = inner_box, outer_box
    if not (ot[0] < it[0] < it[1] < ot[1]):
        raise GridError(f"time interval {it} is not strictly inside {ot}")
    _check_time_interval(grid, ot[0], ot[1], "plateau support")
    tt, xx = grid.mesh
    values = _plateau_1d(tt, it, ot)
    if ox is not None:
        if ix is None or not (ox[0] < ix[0] < ix[1] < ox[1]) or ox[1] - ox[0] >= grid.L:
            raise GridError(f"arc {ix} is not strictly inside {ox}")
        c = 0.5 * (ox[0] + ox[1])
        u = c + grid.circular_offset(xx, c)
        values = values * _plateau_1d(u, ix, ox)
    elif ix is not None:
        raise GridError("inner box cannot be an arc when the outer box is the full circle")
    params = dict(kind="plateau", inner=inner_box, outer=outer_box)
    return TestFunction(grid, values, (tuple(ot), ox), params)


# ---------------------------------------------------------------------------
# Fourier analysis


def fourier(f: TestFunction) -> Spectrum:
    g = f.grid
    phase = np.exp(-1j * g.omega * g.t[0])[:, None]
    values = np.fft.fft2(f.values) * phase * g.w_site
    return Spectrum(values, (g.omega, g.k), g.cell)


def inverse_fourier(spec: Spectrum, grid: SpacetimeGrid) -> np.ndarray:
    phase = np.exp(-1j * grid.omega * grid.t[0])[:, None]
    return np.fft.ifft2(spec.values / (phase * grid.w_site))


def fourier_line(f: LineFunction) -> Spectrum:
    g = f.grid
    phase = np.exp(-1j * g.k * g.x[0])
    return Spectrum(np.fft.fft(f.values) * phase * g.dx, (g.k,), g.cell)


def inverse_fourier_line(values_hat: np.ndarray, grid: LineGrid) -> np.ndarray:
    """Samples of ``(1/P) sum_k values_hat(k) exp(i k x)``."""
    phase = np.exp(-1j * grid.k * grid.x[0])
    return np.fft.ifft(values_hat / phase) / grid.dx


def spectral_derivative(values: np.ndarray, grid: SpacetimeGrid, axis: int) -> np.ndarray:
    """Spectral derivative along ``axis`` (0: time, 1: space); the Nyquist mode is dropped.

    Time derivatives treat the window as periodic, so the input must vanish
    near the time boundary.
    """
    n = values.shape[axis]
    freqs = grid.omega if axis == 0 else grid.k
    mult = 1j * freqs.copy()
    mult[n // 2] = 0.0
    shape = [1, 1]
    shape[axis] = n
    out = np.fft.ifft(np.fft.fft(values, axis=axis) * mult.reshape(shape), axis=axis)
    return out.real if np.isrealobj(values) else out


def spectral_derivative_matrix(n: int, spacing: float) -> np.ndarray:
    """Dense real antisymmetric matrix of the periodic spectral derivative."""
    freqs = 2.0 * np.pi * np.fft.fftfreq(n, d=spacing)
    mult = 1j * freqs
    mult[n // 2] = 0.0
    eye = np.eye(n)
    return np.fft.ifft(np.fft.fft(eye, axis=0) * mult[:, None], axis=0).real


# ---------------------------------------------------------------------------
# mollifiers


def _unit_bump_mass(d: int) -> float:
    if d == 1:
        val, _ = integrate.quad(lambda r: np.exp(-1.0 / (1.0 - r * r)), -1.0, 1.0, epsabs=0, epsrel=1e-13)
        return val
    if d == 2:
        val, _ = integrate.quad(lambda r: 2 * np.pi * r * np.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0,
                                epsabs=0, epsrel=1e-13)
        return val
    raise ValueError("only d = 1, 2 supported")


@dataclass(frozen=True)
class Mollifier:
    """Radial bump ``eta`` with unit integral, scaled as ``eta_l(x) = l^-d eta(x / l)``."""

    d: int = 2

    @cached_property
    def norm(self) -> float:
        return 1.0 / _unit_bump_mass(self.d)

    def __call__(self, x):
        """``eta`` at points ``x`` of shape ``(..., d)``."""
        r = np.linalg.norm(np.atleast_1d(x), axis=-1) if self.d > 1 else np.abs(x)
        out = np.zeros_like(r, dtype=float)
        inside = r < 1.0
        out[inside] = self.norm * np.exp(-1.0 / (1.0 - r[inside] ** 2))
        return out

    def scaled(self, x, lam):
        return self(np.asarray(x) / lam) / lam ** self.d

    def stencil(self, grid: SpacetimeGrid, lam: float):
        """Weighted stencil ``eta_l(offset) * w`` with its discrete mass renormalised to 1.

        Returns ``(stencil, ri, rj, raw_mass)``; ``raw_mass`` is the quadrature
        of ``eta_l`` before renormalisation.
        """
        if lam <= max(grid.dt, grid.dx):
            raise UnresolvedScaleError(
                f"mollifier scale {lam} is not above the grid spacing {max(grid.dt, grid.dx)}")
        ri = int(np.ceil(lam / grid.dt))
        rj = int(np.ceil(lam / grid.dx))
        if 2 * rj + 1 > grid.Nx:
            raise UnresolvedScaleError(f"mollifier scale {lam} exceeds half the circle")
        oi = np.arange(-ri, ri + 1) * grid.dt
        oj = np.arange(-rj, rj + 1) * grid.dx
        pts = np.stack(np.meshgrid(oi, oj, indexing="ij"), axis=-1)
        st = self.scaled(pts, lam) * grid.w_site
        raw = st.sum()
        return st / raw, ri, rj, raw


def mollify(target, mollifier: Mollifier, lam: float):
    """Convolve a :class:`TestFunction` or a kernel with ``eta_lam`` (``eta_lam x eta_lam`` for kernels).

    Convolution is circular along the circle and zero-padded in time.  Test
    functions whose support, widened by ``lam``, leaves the time window are
    rejected.
    """
    if isinstance(target, TestFunction):
        grid = target.grid
        st, ri, rj, _ = mollifier.stencil(grid, lam)
        (t0, t1), arc = target.support
        _check_time_interval(grid, t0 - lam, t1 + lam, "mollified support")
        vals = _accel.stencil_convolve(target.values, st, ri, rj)
        new_arc = None if arc is None or arc[1] - arc[0] + 2 * lam >= grid.L else (arc[0] - lam, arc[1] + lam)
        return TestFunction(grid, vals, ((t0 - lam, t1 + lam), new_arc), {**target.params, "mollified": lam})
    grid = target.grid
    st, ri, rj, _ = mollifier.stencil(grid, lam)
    n = grid.n_sites
    half = _convolve_sites(target.data.reshape(grid.Nt, grid.Nx, n), st, ri, rj).reshape(n, n)
    out = _convolve_sites(half.T.reshape(grid.Nt, grid.Nx, n), st, ri, rj).reshape(n, n)
    return target.with_data(out.T)


def _convolve_sites(data: np.ndarray, stencil: np.ndarray, ri: int, rj: int) -> np.ndarray:
    """Stencil convolution over the leading ``(Nt, Nx)`` axes by FFT, batched over the rest."""
    Nt, Nx = data.shape[:2]
    P = sfft.next_fast_len(Nt + 2 * ri + 1)
    kern = np.zeros((P, Nx))
    oi, oj = np.meshgrid(np.arange(-ri, ri + 1), np.arange(-rj, rj + 1), indexing="ij")
    np.add.at(kern, (oi % P, oj % Nx), stencil)
    batch = np.ascontiguousarray(np.moveaxis(data.reshape(Nt, Nx, -1), -1, 0))
    spec = sfft.fft2(batch, s=(P, Nx), axes=(1, 2))
    spec *= sfft.fft2(kern)
    out = sfft.ifft2(spec, axes=(1, 2), overwrite_x=True)[:, :Nt]
    out = np.moveaxis(out, 0, -1).reshape(data.shape)
    return out if np.iscomplexobj(data) else out.real
