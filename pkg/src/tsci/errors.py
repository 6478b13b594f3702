"""Exception types shared across the package."""


class TsciError(Exception):
    """Base class for all package errors."""


class DimensionError(TsciError):
    """Shape or axis mismatch between tensors, frames or distributions."""


class ContractViolation(TsciError):
    """An operation was called in a way that breaks its documented contract."""


class ConfigError(TsciError):
    """Invalid run configuration, unknown environment or unknown kind."""


class SchemeParseError(ConfigError):
    """Malformed intervention scheme string."""


class CheckpointError(TsciError):
    """Corrupt or incompatible checkpoint/dataset file."""


class UndefinedRatioError(TsciError):
    """Normalized return has a zero denominator; the rollout must be excluded."""
