"""Exception hierarchy shared by all modules."""


class FracGreenError(Exception):
    """Base class for errors raised by this package."""


class ParameterError(FracGreenError, ValueError):
    """An argument is outside the range where the operation is defined."""


class SingularityError(FracGreenError, ValueError):
    """Evaluation requested exactly at a kernel singularity."""


class DomainError(FracGreenError, ValueError):
    """A point lies on the wrong side of a domain boundary."""


class QuadratureError(FracGreenError, RuntimeError):
    """A quadrature did not reach its error target within budget.

    The partial value and achieved error are kept so callers can decide
    whether the result is still usable.
    """

    def __init__(self, message, value=float("nan"), abs_error=float("inf"), context=None):
        super().__init__(message)
        self.value = value
        self.abs_error = abs_error
        self.context = context


class NonContractiveError(FracGreenError, RuntimeError):
    """The perturbation series is not certified to converge on this ball."""


class ConfigError(FracGreenError, ValueError):
    """An experiment configuration file failed to parse or validate."""

    def __init__(self, message, line=None, field=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.field = field
