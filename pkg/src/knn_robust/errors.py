class UsageError(ValueError):
    """Invalid input or configuration supplied by the caller."""


class ParseError(UsageError):
    """A data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class InvariantError(RuntimeError):
    """An internal consistency check failed (a bug, not bad input)."""
