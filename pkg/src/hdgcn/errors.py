"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data/config
problems exit 2, numerical failures exit 3.
"""


class HDGCNError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(HDGCNError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(HDGCNError):
    """A configuration value is invalid or inconsistent."""


class DataError(HDGCNError):
    """Input data violates a contract (bad label, wrong stream, ...)."""


class TopologyError(HDGCNError):
    """A skeleton topology fails validation."""


class TrainingError(HDGCNError):
    """The optimization loop hit a fatal condition (e.g. non-finite grad)."""


class NumericalError(HDGCNError):
    """A numerical verification (e.g. gradient check) exceeded tolerance."""
