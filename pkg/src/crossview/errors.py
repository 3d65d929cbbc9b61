"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class CrossviewError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(CrossviewError):
    """Invalid or inconsistent configuration."""


class DataError(CrossviewError):
    """Corpus or artifact bytes that cannot be used."""


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(DataError):
    """File ends before the declared payload is complete."""


class NonFiniteDataError(DataError):
    """Payload contains NaN or infinite values."""


class ClusteringError(DataError):
    """An epoch's clustering produced no usable clusters."""


class NumericError(CrossviewError):
    """Non-finite loss, gradient, or parameter encountered."""


class DegenerateInputError(NumericError):
    """Zero-norm vector where a direction is required."""
