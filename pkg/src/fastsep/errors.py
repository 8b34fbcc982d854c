"""Exception types shared across the toolkit."""


class FastsepError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(FastsepError):
    """Malformed or out-of-contract input (wrong shape, non-finite, empty)."""


class SingularMatrixError(FastsepError):
    """A matrix that must be inverted is singular or too ill-conditioned."""


class NumericalBreakdownError(FastsepError):
    """An update produced values outside its numerical validity region."""


class DegenerateModelError(FastsepError):
    """Model parameters define a degenerate distribution (e.g. all-zero PSDs)."""
