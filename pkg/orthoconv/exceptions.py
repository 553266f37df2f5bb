"""
Exception hierarchy for the orthoconv package.
Every domain failure derives from OrthoConvError so the CLI can map it to exit code 1.
"""


class OrthoConvError(Exception):
    """Base class for all orthoconv errors."""


class ShapeError(OrthoConvError, ValueError):
    """Raised when tensor shapes or element counts do not match."""


class GeometryError(OrthoConvError, ValueError):
    """Raised when a convolution geometry is invalid (e.g. empty output)."""


class CapacityError(OrthoConvError, ValueError):
    """Raised when a dense materialization would exceed the configured cap."""


class ConfigError(OrthoConvError, ValueError):
    """Raised for invalid configuration values or keys."""


class UnsupportedConfigurationError(ConfigError):
    """Raised for configurations the method does not define (e.g. column form with stride > 1)."""


class FormatError(OrthoConvError, ValueError):
    """Raised when a file does not follow the expected interchange format."""


class NumericalError(OrthoConvError, ArithmeticError):
    """Raised when a numerical routine fails (non-convergence, non-finite values)."""


class TrainingError(NumericalError):
    """Raised when training diverges."""


class DbtIndexError(OrthoConvError, IndexError):
    """Raised for out-of-range DBT row/column indices."""
