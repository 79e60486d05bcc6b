"""Exception types shared across the package."""


class ShygampError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(ShygampError, ValueError):
    """Array shapes do not agree."""


class ZeroWeightsError(ShygampError, ValueError):
    """Operation undefined for an all-zero weight matrix."""


class DegenerateVarianceError(ShygampError, ArithmeticError):
    """A message variance collapsed to zero or below."""


class DivergenceError(ShygampError, ArithmeticError):
    """Iteration state became non-finite."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite state at iteration {iteration}")


class DegenerateLikelihoodError(ShygampError, ArithmeticError):
    """Likelihood mass underflowed to zero."""


class TaylorBreakdownError(ShygampError, ArithmeticError):
    """Second-order likelihood expansion produced a non-positive normalizer."""


class GridGuardError(ShygampError, ValueError):
    """Requested quadrature grid exceeds the size guard."""


class GmFitError(ShygampError, RuntimeError):
    """Offline mixture fit did not reach an acceptable residual."""


class DataFormatError(ShygampError, ValueError):
    """Malformed input file."""


class UsageError(ShygampError, ValueError):
    """Invalid command-line invocation."""
