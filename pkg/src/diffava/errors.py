"""Exception hierarchy. Each class maps onto one CLI exit code."""


class DiffavaError(Exception):
    exit_code = 1


class InvalidArgumentError(DiffavaError, ValueError):
    exit_code = 2


class ShapeError(InvalidArgumentError):
    pass


class ConfigError(DiffavaError, ValueError):
    exit_code = 2


class DataFormatError(DiffavaError):
    """Malformed or truncated file. ``offset`` is the byte position of the fault."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalDivergenceError(DiffavaError, ArithmeticError):
    exit_code = 4


class AcceptanceFailure(DiffavaError):
    exit_code = 5


class DegenerateInputError(InvalidArgumentError):
    """Input lies on a singular point of the operation (e.g. a zero vector to normalize)."""
