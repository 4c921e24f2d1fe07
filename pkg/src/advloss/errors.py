"""Exception types raised across the package."""


class AdvLossError(Exception):
    """Base class for all package errors."""


class ShapeError(AdvLossError, ValueError):
    pass


class ArityError(AdvLossError, ValueError):
    pass


class InvalidValueError(AdvLossError, ArithmeticError):
    """A computation produced NaN or infinity where a finite value is required."""


class ParseError(AdvLossError, ValueError):
    def __init__(self, message, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


class UnknownOperatorError(ParseError):
    pass


class LossNotFoundError(AdvLossError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "loss not found"


class GradientUnsupportedError(AdvLossError, TypeError):
    pass


class UnsupportedLossError(AdvLossError, ValueError):
    pass


class MalformedFileError(AdvLossError, ValueError):
    pass


class InconsistencyError(MalformedFileError):
    pass


class DivergenceError(AdvLossError, FloatingPointError):
    pass


class DimensionTooLargeError(AdvLossError, ValueError):
    pass


class EmptyDatasetError(AdvLossError, ValueError):
    pass


class ConfigError(AdvLossError, ValueError):
    pass
