"""
Exception types raised across the package
"""


class EdlError(Exception):
    """Base class for every error raised by exciton_dot_lab."""


class ValidationError(EdlError, ValueError):
    """Invalid input: bad states, empty bins, mismatched histograms, bad options."""


class ConfigError(ValidationError):
    """Invalid run configuration.

    Args:
        message: Human readable description
        path: Config file the error refers to, if any
        line: 1-based line number inside ``path``, if known
    """

    def __init__(self, message: str, path: str = None, line: int = None):
        self.message = message
        self.path = path
        self.line = line
        super().__init__(str(self))

    def __str__(self) -> str:
        location = self.path or "<config>"
        if self.line is not None:
            location = f"{location}:{self.line}"
        return f"{location}: {self.message}"


class DataFormatError(ValidationError):
    """Malformed CSV input, located by file line and column name."""

    def __init__(self, message: str, path: str = None, row: int = None, column: str = None):
        self.message = message
        self.path = path
        self.row = row
        self.column = column
        super().__init__(str(self))

    def __str__(self) -> str:
        parts = [self.path or "<data>"]
        if self.row is not None:
            parts.append(f"line {self.row}")
        if self.column is not None:
            parts.append(f"column '{self.column}'")
        return f"{', '.join(parts)}: {self.message}"


class FitError(EdlError, RuntimeError):
    """A fit that cannot be attempted or whose result is meaningless."""


class ComponentNotDetected(FitError):
    """No spectral peak above the noise threshold near the requested frequency."""
