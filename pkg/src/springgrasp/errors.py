"""Exception hierarchy shared across the package."""


class SpringGraspError(Exception):
    """Base class for all package errors."""


class FormatError(SpringGraspError):
    """A file could not be parsed in its declared format."""

    def __init__(self, message, path=None, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        if path is not None:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line


class InsufficientDataError(SpringGraspError):
    """Fewer valid data points than the minimum required."""


class DegenerateGeometryError(SpringGraspError):
    """Input geometry has no usable extent (e.g. all points coincide)."""


class DegenerateRotationError(SpringGraspError):
    """Contact layout leaves the equilibrium rotation under-determined."""


class IllConditionedError(SpringGraspError):
    """A matrix factorization failed; a larger noise floor may help."""


class UndefinedMarginError(SpringGraspError):
    """Contact margin is undefined (zero contact force)."""


class ConfigError(SpringGraspError):
    """A configuration file is structurally invalid."""


class NumericalError(SpringGraspError):
    """A numerical routine produced non-finite or non-convergent output."""
