"""Exception types shared across the package."""


class ArtirecError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ArtirecError):
    """Invalid or unknown configuration keys/values."""


class NonConvergence(ArtirecError):
    """Field regression failed to reach the required fit quality."""


class DegenerateTime(ArtirecError):
    """Flow timestep too close to 0 (or 1) for the requested operation."""


class NumericalDivergence(ArtirecError):
    """A parameter became non-finite during optimization.

    Carries the partial training trace recorded up to the failing step.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class AllStatic(ArtirecError):
    """No moving point pairs survive filtering."""


class DegenerateRotation(ArtirecError):
    """Fitted rotation angle too small to define an axis."""


class Collinear(ArtirecError):
    """Point pairs span fewer than two dimensions."""


class EmptyPart(ArtirecError):
    """No voxels carry the requested part label."""


class ZeroVector(ArtirecError):
    """An axis argument has (near-)zero length."""


class EmptyInput(ArtirecError):
    """A point set argument is empty."""


class OutOfBounds(ArtirecError):
    """Generated geometry exits the unit cube at some joint state."""
