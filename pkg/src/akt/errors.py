"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
NumericsError -> 3.
"""


class AktError(Exception):
    """Base class for all package errors."""


class ConfigError(AktError):
    """Invalid configuration or incompatible option combination."""


class DataError(AktError):
    """Malformed input data or violated data invariant."""


class ShapeError(AktError):
    """Tensor dimension mismatch."""


class NumericsError(AktError):
    """Non-finite values or a failed numerical check."""


class MetricError(NumericsError):
    """Metric undefined on the given inputs (e.g. single-class AUC)."""


class DivergenceError(NumericsError):
    """Training loss became non-finite; carries the partial run record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
