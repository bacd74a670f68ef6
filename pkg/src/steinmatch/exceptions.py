"""Exception types raised by steinmatch."""


class SteinMatchError(Exception):
    """Base class for all library errors."""


class ArgumentError(SteinMatchError, ValueError):
    """Invalid argument: wrong shape, non-finite values, out-of-range parameter."""


class UnsupportedError(SteinMatchError, NotImplementedError):
    """The requested operation is not available for this model."""


class DegenerateInputError(SteinMatchError, ValueError):
    """Input is valid in shape but degenerate, e.g. all particles identical."""


class NumericOverflowError(SteinMatchError, FloatingPointError):
    """A particle update produced a non-finite value."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergenceError(SteinMatchError, RuntimeError):
    """The fixed-point residual blew up during a run."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []


class ConsistencyError(SteinMatchError, ArithmeticError):
    """An internal numerical consistency check failed."""


class ConfigError(SteinMatchError, ValueError):
    """Malformed or invalid experiment configuration."""
