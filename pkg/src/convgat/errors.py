"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class ConvGatError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ValidationError(ConvGatError, ValueError):
    """Input did not satisfy a documented contract (exit code 2)."""

    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class StructureError(ValidationError):
    """A thread violates its tree invariants."""


class FormatError(ValidationError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class IdLookupError(ValidationError, LookupError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ShapeError(ValidationError):
    pass


class ArgumentError(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class DataError(ValidationError):
    pass


class StateError(ConvGatError, RuntimeError):
    exit_code = 2


class NumericError(ConvGatError, ArithmeticError):
    """Non-finite values reached a place where they are not allowed (exit code 3)."""

    exit_code = 3
