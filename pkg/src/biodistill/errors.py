"""Exception types shared across the package."""


class BiodistillError(Exception):
    """Base class for all package errors."""


class ShapeError(BiodistillError):
    """An op received tensors whose shapes cannot be combined."""


class NumericError(BiodistillError):
    """A numeric invariant broke: NaN/inf values, non-finite loss, bad norms."""


class ConfigError(BiodistillError):
    """Invalid or inconsistent run configuration."""


class DataError(BiodistillError):
    """Corrupt or inconsistent dataset / checkpoint container."""
