"""Exception types shared across the package."""


class StochactionError(Exception):
    """Base class for package errors."""


class ConfigurationError(StochactionError):
    """Invalid parameters, config keys, or scenario setup."""


class ShapeError(StochactionError):
    """Field does not match its grid, or contains non-finite entries."""


class NodeError(StochactionError):
    """Density too close to zero for an amplitude-dividing operation."""


class NumericalError(StochactionError):
    """Solver failure: blow-up, non-convergence, or singular system."""
