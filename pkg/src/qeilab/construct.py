"""Explicit constructions: the one-sided symbol, the two-chart atlas of the
cylinder, the half-delta kernel ``u`` with its bound constant, the derivative
kernel ``w`` and the assembled QEI constants."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CoverageError, GridError, ResolutionError
from .grid import (LineFunction, LineGrid, SpacetimeGrid, Spectrum, TestFunction, inverse_fourier_line,
                   smooth_step, spectral_derivative_matrix)
from .kernels import KernelMatrix


# ---------------------------------------------------------------------------
# symbol


def v_hat(l: int, k):
    """``1/2 (1+k^2)^-l`` for ``k > 0`` and ``1 - 1/2 (1+k^2)^-l`` for ``k <= 0``."""
    if int(l) != l or l < 1:
        raise ValueError(f"order l must be a positive integer, got {l}")
    k = np.asarray(k, dtype=float)
    half = 0.5 * (1.0 + k * k) ** (-l)
    return np.where(k > 0, half, 1.0 - half)


def lattice_v_hat(l: int, freqs: np.ndarray) -> np.ndarray:
    """``v_hat`` on an fft-ordered lattice.

    For an even lattice the Nyquist node is its own mirror image, so it gets
    the value 1/2; ``v(k) + v(-k) = 1`` then holds node by node.
    """
    out = v_hat(l, freqs)
    n = len(freqs)
    if n % 2 == 0:
        out = out.copy()
        out[n // 2] = 0.5
    return out


@dataclass(frozen=True)
class SpectralSymbol:
    l: int

    def __call__(self, k):
        return v_hat(self.l, k)

    def lower_bound(self, k):
        return 0.5 * (1.0 + np.asarray(k, dtype=float) ** 2) ** (-self.l)


def build_v(l: int, grid: LineGrid) -> LineFunction:
    """Samples of ``v = (1/P) sum_k v_hat(k) e^{ikx}`` on a periodic line."""
    if np.max(np.abs(grid.k)) < 8.0:
        raise GridError("line lattice must resolve |k| <= 8")
    return LineFunction(grid, inverse_fourier_line(lattice_v_hat(l, grid.k), grid))


# ---------------------------------------------------------------------------
# atlas


@dataclass(frozen=True, eq=False)
class Chart:
    center: float           # arc centre on the circle
    half_width: float       # chart domain is the open arc |x - center| < half_width
    chi: np.ndarray         # cutoff samples on the grid
    mu: np.ndarray          # density of the volume form in chart coordinates


@dataclass(frozen=True, eq=False)
class ChartAtlas:
    grid: SpacetimeGrid
    charts: Tuple[Chart, ...]
    covered: Tuple[float, float]

    @property
    def n(self) -> int:
        return len(self.charts)

    def kappa(self, j: int) -> Tuple[np.ndarray, np.ndarray]:
        """Chart coordinates ``(t, x - center)`` with the angle unwrapped into ``(-L/2, L/2)``."""
        tt, xx = self.grid.mesh
        return tt, self.grid.circular_offset(xx, self.charts[j].center)

    def partition_sum(self) -> np.ndarray:
        return sum(c.chi ** 2 for c in self.charts)


def build_atlas_cylinder(grid: SpacetimeGrid, covered_region: Tuple[float, float]) -> ChartAtlas:
    """Two overlapping angular charts with ``chi_1^2 + chi_2^2 = 1`` on the covered time slab."""
    t0, t1 = covered_region
    if not (-grid.T < t0 < t1 < grid.T):
        raise GridError(f"covered region {covered_region} touches the time boundary")
    room = min(t0 + grid.T, grid.T - t1)
    pad = 0.5 * room
    tt, xx = grid.mesh
    tcut = smooth_step((tt - (t0 - pad)) / pad) * smooth_step(((t1 + pad) - tt) / pad)
    L = grid.L
    h = L / 16.0
    r = np.abs(grid.circular_offset(xx, 0.0))
    theta = 0.5 * np.pi * smooth_step((r - (L / 4 - h)) / (2 * h))
    ones = np.ones(grid.shape)
    charts = (
        Chart(0.0, L / 4 + 2 * h, tcut * np.cos(theta), ones),
        Chart(L / 2, L / 4 + 2 * h, tcut * np.sin(theta), ones),
    )
    return ChartAtlas(grid, charts, (t0, t1))


def chart_factors(F: TestFunction, atlas: ChartAtlas) -> List[np.ndarray]:
    """``F chi_j mu_j^{-1/2}`` per chart; checks the cutoffs cover ``supp F``."""
    if F.grid != atlas.grid:
        raise GridError("atlas and smearing function grids differ")
    if np.iscomplexobj(F.values) and np.any(np.abs(F.values.imag) > 0):
        raise ValueError("F must be real")
    Fv = np.real(F.values)
    on = np.abs(Fv) > 0
    if np.any(np.abs(atlas.partition_sum()[on] - 1.0) > 1e-10):
        raise CoverageError("chart cutoffs do not cover supp(F)")
    return [Fv * c.chi / np.sqrt(c.mu) for c in atlas.charts]


def _check_f_inside(f: TestFunction, F: TestFunction):
    if np.any((np.abs(f.values) > 0) & (np.real(F.values) <= 0)):
        raise CoverageError("supp(f) escapes {F > 0}")


# ---------------------------------------------------------------------------
# kernels u and w


def symbol_kernel(grid: SpacetimeGrid, l: int) -> np.ndarray:
    """Dense ``sum_k v_hat(k_1) e^{ik.(x-y)} / (2T L)`` on site pairs.

    ``v_hat`` depends on the time frequency only, so the spatial sum collapses
    to the discrete delta ``delta_xy / dx``.
    """
    vh = lattice_v_hat(l, grid.omega)
    row = np.fft.ifft(vh) / grid.dt        # (1/2T) sum_m v(w_m) e^{i w_m n dt}
    idx = (np.arange(grid.Nt)[:, None] - np.arange(grid.Nt)[None, :]) % grid.Nt
    Vt = row[idx]
    return np.kron(Vt, np.eye(grid.Nx) / grid.dx)


def build_u(f: TestFunction, F: TestFunction, atlas: ChartAtlas, l: int) -> KernelMatrix:
    """Dense density of ``u(x,y) = sum_j g_j(x) g_j(y) (2pi)^-d int v_hat(k_1) e^{i k.(x-y)} dk``,
    ``g_j = F chi_j mu_j^{-1/2}``, on the grid's frequency lattice."""
    _check_f_inside(f, F)
    gs = chart_factors(F, atlas)
    Kv = symbol_kernel(atlas.grid, l)
    data = np.zeros_like(Kv)
    for g in gs:
        gv = g.ravel()
        data += gv[:, None] * Kv * gv[None, :]
    return KernelMatrix(data, atlas.grid, True)


def frame_derivatives(grid: SpacetimeGrid):
    """Spectral derivative matrices along the orthonormal frame ``(d_t, d_x)``."""
    Dt = spectral_derivative_matrix(grid.Nt, grid.dt)
    Dx = spectral_derivative_matrix(grid.Nx, grid.dx)
    return (np.kron(Dt, np.eye(grid.Nx)), np.kron(np.eye(grid.Nt), Dx))


def build_w(F: TestFunction, atlas: ChartAtlas, l: int) -> KernelMatrix:
    """Dense density of ``w``: the frame derivative acts on the whole chart factor
    ``g_j e^{i k.x}``, so ``w`` is a sum of squares chart by chart."""
    gs = chart_factors(F, atlas)
    Kv = symbol_kernel(atlas.grid, l)
    data = np.zeros_like(Kv)
    for D in frame_derivatives(atlas.grid):
        for g in gs:
            B = D * g.ravel()[None, :]       # D diag(g)
            data += B @ Kv @ B.T
    return KernelMatrix(data, atlas.grid, True)


def u_form(h: np.ndarray, F: TestFunction, atlas: ChartAtlas, l: int) -> np.ndarray:
    """Spectral evaluation of ``pair(U, h, h)`` for a batch ``h`` of shape ``(..., Nt, Nx)``.

    ``sum_j sum_x dx sum_{k1} v_hat(k_1)/(2T) |sum_t g_j h e^{-i k_1 t} dt|^2``.
    """
    grid = atlas.grid
    vh = lattice_v_hat(l, grid.omega)
    phase = np.exp(-1j * grid.omega * grid.t[0])[:, None]
    total = 0.0
    for g in chart_factors(F, atlas):
        spec = np.fft.fft(g * h, axis=-2) * phase * grid.dt
        total = total + np.einsum("m,...mx->...", vh, np.abs(spec) ** 2) * grid.dx / (2 * grid.T)
    return total


def w_form(grads: Sequence[np.ndarray], F: TestFunction, atlas: ChartAtlas, l: int) -> np.ndarray:
    """``pair(W, h, h)`` from the frame derivatives ``(d_t h, d_x h)`` of ``h``."""
    return sum(u_form(gh, F, atlas, l) for gh in grads)


# ---------------------------------------------------------------------------
# constants


def bound_constant_Cprime(f: TestFunction, F: TestFunction, atlas: ChartAtlas, l: int,
                          edge_tol: Optional[float] = 1e-6) -> float:
    """``(2n / (2pi)^d) max_j int (1+k_1^2)^l |[mu_j^{1/2} chi_j f/F]^(k)|^2 d^dk`` on the lattice.

    Raises :class:`ResolutionError` when the share of the integrand in the
    outer tenth of the time-frequency lattice exceeds ``edge_tol``.
    """
    _check_f_inside(f, F)
    grid = atlas.grid
    chart_factors(F, atlas)
    Fv = np.real(F.values)
    ftil = np.where(Fv != 0, f.values / np.where(Fv != 0, Fv, 1.0), 0.0)
    phase = np.exp(-1j * grid.omega * grid.t[0])[:, None]
    weight = (1.0 + grid.omega ** 2) ** l
    edge = np.abs(grid.omega) >= 0.9 * np.max(np.abs(grid.omega))
    totals, tails = [], []
    for c in atlas.charts:
        h = np.sqrt(c.mu) * c.chi * ftil
        spec = np.fft.fft2(h) * phase * grid.w_site
        integrand = weight[:, None] * np.abs(spec) ** 2
        totals.append(integrand.sum())
        tails.append(integrand[edge].sum())
    best = max(totals)
    if edge_tol is not None and best > 0 and max(tails) > edge_tol * best:
        raise ResolutionError("C' integrand has not decayed at the lattice edge; refine the grid")
    return float(2 * atlas.n * best / (2 * grid.T * grid.L))


@dataclass(frozen=True)
class BoundConstants:
    Cprime: float
    C: float
    c0: float
    c2: float
    c: float
    delta_max: float
    m: float

    def as_dict(self):
        return dict(Cprime=self.Cprime, C=self.C, c0=self.c0, c2=self.c2, c=self.c,
                    delta_max=self.delta_max, m=self.m)


def assemble_constants(Cprime: float, c0: float, c2: float, m: float, delta_max: float = 0.0) -> BoundConstants:
    """``C = C'/m^2`` and ``c = m^2 c0 + c2 + delta_max``."""
    vals = (Cprime, c0, c2, m, delta_max)
    if not all(np.isfinite(v) for v in vals):
        raise ValueError("constants must be finite")
    if not m > 0:
        raise ValueError("mass must be positive")
    return BoundConstants(Cprime, Cprime / m ** 2, c0, c2, m * m * c0 + c2 + delta_max, delta_max, m)


def v_spectrum(l: int, grid: LineGrid):
    """Closed-form lattice spectrum of ``v`` on a periodic line."""
    return Spectrum(lattice_v_hat(l, grid.k), (grid.k,), grid.cell)


def v_delta_spectra(l: int, k1: np.ndarray, k2: np.ndarray, alpha: float):
    """Spectra of ``v x delta`` on a 2-d lattice and of the 1-d reduction with the
    transverse cone width ``2 alpha |k_1|`` folded in as the ``k^{d-1}`` factor."""
    dk1 = abs(k1[1] - k1[0])
    dk2 = abs(k2[1] - k2[0])
    vh = lattice_v_hat(l, k1)
    two = Spectrum(np.outer(vh, np.ones_like(k2)), (k1, k2), dk1 * dk2)
    one = Spectrum(vh * np.sqrt(2.0 * alpha * np.abs(k1)), (k1,), dk1)
    return two, one
