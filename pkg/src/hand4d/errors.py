"""Exception types shared across the package."""


class Hand4DError(Exception):
    """Base class for all package errors."""


class FormatError(Hand4DError):
    """A file does not parse as its declared format."""


class ValidationError(Hand4DError):
    """Parsed data violates a documented invariant."""


class GenerationError(Hand4DError):
    """A synthetic scenario cannot be realized (e.g. a joint falls behind the camera)."""


class SolverError(Hand4DError):
    """Optimization could not proceed (non-finite objective at the start point, bad config)."""
