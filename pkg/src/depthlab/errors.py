"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class DepthlabError(Exception):
    """Base class for all depthlab errors."""


class ValidationError(DepthlabError):
    """Bad input data or violated preconditions (CLI exit code 2)."""


class NumericalError(DepthlabError):
    """Degenerate or diverging numerics (CLI exit code 3)."""


class ParseError(ValidationError):
    """Malformed file contents; carries the offending byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
