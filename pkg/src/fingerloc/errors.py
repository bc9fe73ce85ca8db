"""Exception types shared across the toolkit."""


class FingerlocError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(FingerlocError):
    """Malformed input data (wrong shape, non-finite values, out-of-range fields)."""


class ConfigError(FingerlocError):
    """Invalid or incomplete run configuration."""


class DataError(FingerlocError):
    """Dataset-level problem: missing samples, checksum mismatch, bad split."""


class FormatError(FingerlocError):
    """Corrupt or incompatible on-disk container (model file, packet file)."""


class DegenerateClusteringError(FingerlocError):
    """Clustering produced an empty cluster, so quality scores are undefined."""


class RejectedSampleError(FingerlocError):
    """Online sample failed the abnormality check and cannot be classified."""
