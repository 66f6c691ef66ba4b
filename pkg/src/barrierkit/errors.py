"""Exception types shared across the package."""


class BarrierkitError(Exception):
    """Base class for all package errors."""


class MeshingError(BarrierkitError):
    """Mesh generation failed or produced degenerate elements."""


class GeometryError(BarrierkitError):
    """Invalid domain description or boundary selection."""


class WeightError(BarrierkitError):
    """Weight evaluation failed (singular point, nonpositive value)."""


class SolverError(BarrierkitError):
    """Nonlinear solve did not converge. Carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class CapacityError(BarrierkitError):
    """Ill-posed condenser (empty plate, plate touching the container rim)."""


class CalibrationError(BarrierkitError):
    """No grid pair passed the calibration probes, or the boundary is not fat."""


class BarrierError(BarrierkitError):
    """Barrier assembly or verification failed structurally."""


class MajorantError(BarrierkitError):
    """A truncated iterate escaped its barrier majorant."""


class ConfigError(BarrierkitError):
    """Configuration file invalid; message names the offending field path."""
