"""Exception hierarchy shared by all gridsynth modules."""


class GridsynthError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(GridsynthError, ValueError):
    """Raised when raster, tensor or grid dimensions disagree."""


class BoundsError(GridsynthError, IndexError):
    """Raised for cell indices or sketch parameters outside the grid."""


class ResolutionError(GridsynthError, LookupError):
    """Raised when a program component cannot be resolved to pixels."""


class ParseError(GridsynthError, ValueError):
    """Raised for malformed program or mask text; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BudgetError(GridsynthError, RuntimeError):
    """Raised when exhaustive search would exceed its candidate budget."""

    def __init__(self, message: str, count: int):
        self.count = count
        super().__init__(message)


class InputError(GridsynthError, ValueError):
    """Raised for semantically invalid inputs (e.g. an empty known region)."""
