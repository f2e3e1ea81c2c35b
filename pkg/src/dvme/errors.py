"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ParameterError -> 2 (usage/config),
FormatError and UndefinedMetricError -> 3 (data/corruption), NumericError -> 4.
"""


class DvmeError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(DvmeError):
    """Invalid hyperparameter, flag, or call contract violation."""


class ShapeMismatchError(ParameterError):
    """Tensor dimensions do not agree."""


class NumericError(DvmeError):
    """Non-finite values or a failed numerical check."""


class StaleCacheError(DvmeError):
    """A backward pass was given a cache from a different forward pass."""


class UndefinedMetricError(DvmeError):
    """Metric is undefined for the given inputs (e.g. single-class AUC)."""


class CapacityError(DvmeError):
    """A balanced subsample request exceeds per-class availability."""

    def __init__(self, message, limiting_class=None):
        super().__init__(message)
        self.limiting_class = limiting_class


class FormatError(DvmeError):
    """Base class for binary container violations."""


class MagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """Container version is not supported."""


class ChecksumError(FormatError):
    """Trailing CRC32 does not match the file contents."""


class TruncationError(FormatError):
    """File ends before the declared payload does."""
