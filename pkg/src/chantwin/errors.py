"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes or lengths do not line up."""


class StateError(RuntimeError):
    """An operation was called in the wrong order (e.g. backward before forward)."""


class NumericError(ArithmeticError):
    """A non-finite value showed up where finite numbers are required."""


class ParseError(ValueError):
    """A text or binary file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    line : int, optional
        1-based line (or row) number in the offending file.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ValueError):
    """A domain object violates one of its invariants."""
