"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RRSError(Exception):
    """Base class for all errors raised by rrsquant."""


class ValidationError(RRSError, ValueError):
    """An argument or configuration value is out of its allowed domain."""


class ShapeError(ValidationError):
    """Operand shapes are incompatible."""


class ConfigError(ValidationError):
    """A combination of settings cannot be executed (e.g. misaligned blocks)."""


class UnsupportedDimensionError(ConfigError):
    """The rotation dimension is not supported (only powers of two are)."""


class UndefinedMetricError(RRSError, ArithmeticError):
    """A smoothness metric was requested for an all-zero token."""


class TensorFormatError(RRSError):
    """Base class for tensor-file parse failures."""


class BadMagicError(TensorFormatError):
    pass


class UnsupportedVersionError(TensorFormatError):
    pass


class UnsupportedDTypeError(TensorFormatError):
    pass


class RankError(TensorFormatError):
    pass


class TruncatedError(TensorFormatError):
    """Header or payload ends before the declared size."""


class TrailingDataError(TensorFormatError):
    """Bytes remain after the declared payload."""
