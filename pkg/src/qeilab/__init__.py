"""Numerical laboratory for quantum energy inequalities of the free massive
scalar field on the 1+1 dimensional cylinder."""

__version__ = "0.1.0"

from .grid import (LineGrid, Mollifier, SpacetimeGrid, TestFunction, bump, fourier,  # noqa: F401
                   inverse_fourier, make_grid, mollify, plateau)
from .kernels import (ConeSpec, KernelMatrix, pair, positivity_check, schur_product,  # noqa: F401
                      hs_decompose)
