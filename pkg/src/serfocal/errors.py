"""Exception hierarchy.

``ValidationError`` subclasses signal bad user input (CLI exit code 2);
everything else deriving from ``SerError`` is a runtime failure (exit 1).
"""


class SerError(Exception):
    pass


class ValidationError(SerError):
    pass


class DecodeError(SerError):
    pass


class EmptyInputError(ValidationError):
    pass


class ShapeError(SerError, ValueError):
    pass


class DomainError(SerError, ValueError):
    pass


class NumericError(SerError, FloatingPointError):
    pass


class ConfigError(ValidationError):
    pass


class SchemaError(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class StratificationError(ValidationError):
    pass


class FormatError(SerError):
    pass


class DivergenceError(SerError):
    def __init__(self, epoch, batch, loss):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class DegenerateBatchWarning(UserWarning):
    pass
