"""Exception hierarchy shared across the package."""


class ATBPError(Exception):
    """Base class for all package errors."""


class DomainError(ATBPError, ValueError):
    """Input lies outside the domain of a transformation or model."""


class ParameterError(ATBPError, ValueError):
    """Transformation or model parameters are not admissible."""


class InverseOverflowError(ATBPError, FloatingPointError):
    """The closed-form inverse transform saturated the float range."""


class ConvergenceError(ATBPError, RuntimeError):
    """An optimizer or resampling loop failed to produce a usable result.

    ``partial`` carries the best available result, when there is one.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class InputError(ATBPError, ValueError):
    """Malformed user input (files, schemas, configuration)."""
