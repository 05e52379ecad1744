"""Exception hierarchy shared across the package."""


class PeaceError(Exception):
    """Base class for all library errors."""


class ValidationError(PeaceError, ValueError):
    """Input violates a documented invariant."""


class ParseError(ValidationError):
    """Malformed text input; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class FormatError(ValidationError):
    """Signal file does not match the declared on-disk layout."""


class ConfigError(ValidationError):
    """Bad run configuration (unknown key, wrong type, bad value)."""
