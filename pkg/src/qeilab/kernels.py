"""Discretised bikernels: pairings, positive-type witnesses, Schur products,
mollified pairing ladders and Sobolev cone diagnostics."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import _accel
from .errors import EmptyConeError, GridMismatchError, PositivityError
from .grid import Mollifier, SpacetimeGrid, Spectrum, mollify

DEFAULT_TOL = 1e-8
RATIO_THRESHOLD = 1e-2


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """Complex matrix indexed by site pairs.

    When ``density`` is set the entries are a density with respect to the site
    weights, so pairings carry one weight per argument.  ``grid=None`` gives a
    plain matrix (unit weights), used for abstract positivity batteries.
    """

    data: np.ndarray
    grid: Optional[SpacetimeGrid] = None
    density: bool = True

    def __post_init__(self):
        n = self.data.shape[0]
        if self.data.ndim != 2 or self.data.shape[1] != n:
            raise ValueError("kernel must be a square matrix")
        if self.grid is not None and n != self.grid.n_sites:
            raise ValueError(f"kernel size {n} does not match grid with {self.grid.n_sites} sites")

    @property
    def weight(self) -> float:
        if self.grid is None or not self.density:
            return 1.0
        return self.grid.w_site

    def weighted(self) -> np.ndarray:
        """The Hermitian form ``diag(sqrt w) K diag(sqrt w)``."""
        return self.data * self.weight

    def with_data(self, data) -> "KernelMatrix":
        return KernelMatrix(np.asarray(data), self.grid, self.density)

    @property
    def T(self) -> "KernelMatrix":
        return self.with_data(self.data.T)

    def __add__(self, other):
        _same_grid(self, other)
        return self.with_data(self.data + other.data)

    def __sub__(self, other):
        _same_grid(self, other)
        return self.with_data(self.data - other.data)

    def __mul__(self, scalar):
        return self.with_data(self.data * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_data(-self.data)

    @classmethod
    def delta(cls, grid: SpacetimeGrid) -> "KernelMatrix":
        """Discrete ``delta_mu`` as a density: identity divided by the site weight."""
        return cls(np.eye(grid.n_sites, dtype=complex) / grid.w_site, grid, True)

    @classmethod
    def outer(cls, f, g=None) -> "KernelMatrix":
        """Density of ``f(x) conj(g(y))`` (``g`` defaults to ``f``)."""
        g = f if g is None else g
        return cls(np.outer(f.flat, np.conj(g.flat)).astype(complex), f.grid, True)


def _same_grid(a, b):
    if a.grid != b.grid:
        raise GridMismatchError("kernels live on different grids")


def pair(K: KernelMatrix, f, g) -> complex:
    """``sum_ab conj(f_a) K_ab g_b w_a w_b`` (one weight per argument for densities)."""
    if K.grid is not None and (f.grid != K.grid or g.grid != K.grid):
        raise GridMismatchError("test function and kernel grids differ")
    w = K.weight
    return complex(np.conj(f.flat) @ (K.data @ g.flat)) * w * w


def pair_kernels(K1: KernelMatrix, K2: KernelMatrix) -> complex:
    """Distributional pairing ``sum_ab K1_ab K2_ab w_a w_b`` (``K2`` used as test function)."""
    _same_grid(K1, K2)
    w = K1.weight
    return complex(np.sum(K1.data * K2.data)) * w * w


@dataclass(frozen=True)
class PositivityWitness:
    min_eigenvalue: float
    norm: float
    tolerance: float
    hermitian_defect: float

    @property
    def positive(self) -> bool:
        return self.min_eigenvalue >= -self.tolerance * self.norm

    @property
    def verdict(self) -> str:
        return "positive-type" if self.positive else "negative"

    @property
    def relative_min(self) -> float:
        return self.min_eigenvalue / self.norm if self.norm > 0 else 0.0


def _hermitian_form(K: KernelMatrix):
    A = K.weighted()
    if not np.all(np.isfinite(A)):
        raise ValueError("kernel has non-finite entries")
    scale = np.max(np.abs(A)) if A.size else 0.0
    defect = float(np.max(np.abs(A - A.conj().T)) / scale) if scale > 0 else 0.0
    # Hermitise; the defect is reported alongside the witness.
    return 0.5 * (A + A.conj().T), defect


def positivity_check(K: KernelMatrix, tol: float = DEFAULT_TOL) -> PositivityWitness:
    """Spectral witness of the positive-type property for the weighted form."""
    A, defect = _hermitian_form(K)
    eig = np.linalg.eigvalsh(A)
    norm = float(np.max(np.abs(eig))) if eig.size else 0.0
    return PositivityWitness(float(eig[0]), norm, tol, defect)


def schur_product(K1: KernelMatrix, K2: KernelMatrix) -> KernelMatrix:
    _same_grid(K1, K2)
    if K1.data.shape != K2.data.shape:
        raise GridMismatchError("kernel shapes differ")
    return KernelMatrix(K1.data * K2.data, K1.grid, K1.density and K2.density)


def hs_decompose(K: KernelMatrix, tol: float = DEFAULT_TOL) -> List[Tuple[float, np.ndarray]]:
    """Spectral decomposition ``K = sum_j x_j psi_j psi_j^*`` with ``x_j >= 0``.

    The ``psi_j`` are orthonormal in the weighted inner product; eigenvalues
    below ``tol * norm`` in magnitude are dropped.
    """
    A, _ = _hermitian_form(K)
    eig, vec = np.linalg.eigh(A)
    norm = float(np.max(np.abs(eig))) if eig.size else 0.0
    if eig.size and eig[0] < -tol * norm:
        raise PositivityError(f"kernel not of positive type: min eigenvalue {eig[0]:.3e}, norm {norm:.3e}")
    w = K.weight
    keep = eig > tol * norm
    terms = [(float(x), vec[:, j] / np.sqrt(w)) for j, x in zip(np.flatnonzero(keep), eig[keep])]
    terms.sort(key=lambda p: -p[0])
    return terms


def hs_reconstruct(terms, grid=None, density=True) -> KernelMatrix:
    n = terms[0][1].shape[0]
    data = np.zeros((n, n), dtype=complex)
    for x, psi in terms:
        data += x * np.outer(psi, psi.conj())
    return KernelMatrix(data, grid, density)


# ---------------------------------------------------------------------------
# mollified pairing ladders


@dataclass(frozen=True)
class LadderReport:
    lambdas: Tuple[float, ...]
    values: Tuple[float, ...]
    differences: Tuple[float, ...]
    ratios: Tuple[float, ...]
    convergent: bool
    positive: bool


def mollified_pairing_limit(K1: KernelMatrix, K2: KernelMatrix, mollifier: Mollifier,
                            lambdas: Sequence[float], tol: float = DEFAULT_TOL,
                            noise: float = 1e-12):
    """Pairings ``p(l) = sum_ab K1^(l)_ab K2^(l)_ab w_a w_b`` along a decreasing ladder.

    Returns ``(p(l_last), report)``.  The ladder is reported non-convergent if
    successive differences fail to shrink beyond the noise floor.
    """
    lambdas = [float(l) for l in lambdas]
    if any(b >= a for a, b in zip(lambdas, lambdas[1:])):
        raise ValueError("lambda ladder must be strictly decreasing")
    vals = []
    for lam in lambdas:
        p = pair_kernels(mollify(K1, mollifier, lam), mollify(K2, mollifier, lam))
        vals.append(p.real)
    w = K1.weight
    scale = np.linalg.norm(K1.data) * np.linalg.norm(K2.data) * w * w
    diffs = np.diff(vals)
    floor = noise * max(scale, 1e-300)
    ratios = tuple(float(abs(b) / abs(a)) if abs(a) > floor else 0.0 for a, b in zip(diffs, diffs[1:]))
    convergent = all(abs(b) <= abs(a) or abs(b) <= floor for a, b in zip(diffs, diffs[1:]))
    positive = all(v >= -tol * scale for v in vals)
    report = LadderReport(tuple(lambdas), tuple(vals), tuple(float(d) for d in diffs), ratios,
                          convergent, positive)
    return vals[-1], report


# ---------------------------------------------------------------------------
# Sobolev cone diagnostics


@dataclass(frozen=True)
class ConeSpec:
    """Open convex cone ``{k : alpha (k.p) > |k - (k.p) p|}`` around the unit covector ``p``."""

    direction: Tuple[float, ...]
    alpha: float
    s: float
    cutoffs: Tuple[float, ...]

    def __post_init__(self):
        p = np.asarray(self.direction, dtype=float)
        if not np.linalg.norm(p) > 0:
            raise ValueError("cone direction must be non-zero")
        object.__setattr__(self, "direction", tuple(p / np.linalg.norm(p)))
        if not self.alpha > 0:
            raise ValueError("cone opening must be positive")
        if any(b <= a for a, b in zip(self.cutoffs, self.cutoffs[1:])):
            raise ValueError("cutoff ladder must increase")

    def contains(self, k) -> np.ndarray:
        k = np.atleast_2d(k)
        p = np.asarray(self.direction)
        along = k @ p
        perp = np.linalg.norm(k - along[:, None] * p, axis=1)
        return self.alpha * along > perp


@dataclass(frozen=True)
class ConeLadder:
    cutoffs: Tuple[float, ...]
    partials: Tuple[float, ...]
    ratios: Tuple[float, ...]
    bounded: bool
    n_points: int

    @property
    def verdict(self) -> str:
        return "bounded" if self.bounded else "growing"


def cone_sobolev_integral(spectrum: Spectrum, cone: ConeSpec,
                          threshold: float = RATIO_THRESHOLD) -> ConeLadder:
    """Partial sums of ``(1 + |k|^2)^s |uhat(k)|^2`` over the cone, cell-weighted, per cutoff.

    The ladder is declared bounded when the last ratio ``I(K_r+1) / I(K_r)``
    is below ``1 + threshold``.
    """
    kv = spectrum.kvecs
    if kv.shape[1] != len(cone.direction):
        raise ValueError("cone dimension does not match the spectrum")
    dens = (1.0 + np.sum(kv * kv, axis=1)) ** cone.s * np.abs(spectrum.values.ravel()) ** 2 * spectrum.cell
    partials, count = _accel.cone_partials(kv, dens, np.asarray(cone.direction), cone.alpha,
                                           np.asarray(cone.cutoffs, dtype=float))
    if count == 0:
        raise EmptyConeError("cone contains no lattice frequencies")
    ratios = tuple(float(b / a) if a > 0 else np.inf for a, b in zip(partials, partials[1:]))
    bounded = bool(ratios and ratios[-1] < 1.0 + threshold)
    return ConeLadder(tuple(float(c) for c in cone.cutoffs), tuple(float(p) for p in partials),
                      ratios, bounded, count)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    stderr: float
    magnitudes: Tuple[float, ...]
    amplitudes: Tuple[float, ...]
    verdict: str

    @property
    def band(self) -> Tuple[float, float]:
        return (self.slope - 2 * self.stderr, self.slope + 2 * self.stderr)


NOISE_FLOOR = 1e-14


def fit_decay(magnitudes, amplitudes, min_points: int = 16) -> DecayFit:
    """Least-squares slope of log|amplitude| against log|k|, skipping the lowest quartile."""
    mags = np.asarray(magnitudes, dtype=float)
    amps = np.abs(np.asarray(amplitudes))
    order = np.argsort(mags)
    mags, amps = mags[order], amps[order]
    usable = amps > NOISE_FLOOR
    if usable.sum() < min_points:
        return DecayFit(np.nan, np.nan, tuple(mags), tuple(amps), "below-noise")
    m, a = mags[usable], amps[usable]
    skip = len(m) // 4
    m, a = m[skip:], a[skip:]
    X = np.log(m)
    Y = np.log(a)
    coef, cov = np.polyfit(X, Y, 1, cov=True)
    return DecayFit(float(coef[0]), float(np.sqrt(cov[0, 0])), tuple(mags), tuple(amps), "fitted")


def ray_magnitudes(k_min: float, k_max: float, n: int = 32) -> np.ndarray:
    return np.linspace(k_min, k_max, n)


def decay_exponent(samples, direction, magnitudes, min_points: int = 16) -> DecayFit:
    """Decay slope of the transform of localised ``samples`` along the ray ``s * direction``.

    ``samples`` exposes ``coords`` (sites x d), ``flat`` values and ``weight``.
    """
    p = np.asarray(direction, dtype=float)
    p = p / np.linalg.norm(p)
    mags = np.asarray(magnitudes, dtype=float)
    if len(mags) < min_points:
        raise ValueError(f"need at least {min_points} frequencies along the ray")
    freqs = mags[:, None] * p[None, :]
    vals = _accel.direct_transform(samples.coords, samples.flat, freqs) * samples.weight
    return fit_decay(mags, vals, min_points)


def kernel_transform(K: KernelMatrix, p, q, localizer=None) -> complex:
    """``sum_ab B_a B_b K_ab exp(-i (p.x_a + q.y_b)) w_a w_b`` for one covector pair."""
    g = K.grid
    X = g.coords
    ea = np.exp(-1j * (X @ np.asarray(p, dtype=float)))
    eb = np.exp(-1j * (X @ np.asarray(q, dtype=float)))
    if localizer is not None:
        ea = ea * localizer.flat
        eb = eb * localizer.flat
    w = K.weight
    return complex(ea @ (K.data @ eb)) * w * w


def kernel_decay_exponent(K: KernelMatrix, direction, magnitudes, localizer=None,
                          min_points: int = 16) -> DecayFit:
    """Decay slope of the localised kernel transform along ``s * (p, q)``, ``direction = (p, q)``."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    half = len(d) // 2
    mags = np.asarray(magnitudes, dtype=float)
    if len(mags) < min_points:
        raise ValueError(f"need at least {min_points} frequencies along the ray")
    vals = [kernel_transform(K, s * d[:half], s * d[half:], localizer) for s in mags]
    return fit_decay(mags, vals, min_points)
