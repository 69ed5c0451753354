"""Exception types raised across the package."""


class GridError(ValueError):
    """Invalid grid parameters or a support that does not fit the grid."""


class UnresolvedScaleError(ValueError):
    """Mollifier scale at or below the grid spacing."""


class GridMismatchError(ValueError):
    """Operands live on different grids."""


class PositivityError(ValueError):
    """A kernel required to be of positive type failed its witness."""


class EmptyConeError(ValueError):
    """No lattice frequency lies inside the requested cone."""


class CutoffError(ValueError):
    """Mode cutoff too small for the requested state or accuracy."""


class ResolutionError(ValueError):
    """A frequency integral has not decayed at the edge of the lattice."""


class CoverageError(ValueError):
    """Chart cutoffs fail to cover the support of a smearing function."""


class BoundViolation(RuntimeError):
    """A theorem check failed; ``payload`` carries the offending state."""

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload or {}
