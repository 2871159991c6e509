# src/teg/errors.py
"""Exception hierarchy shared by every TeG module."""


class TeGError(Exception):
    """Root of all errors raised by the library."""


class ContractError(TeGError, ValueError):
    """An operation was called outside its precondition."""


class ShapeError(ContractError):
    """Tensor or matrix dimensions do not agree."""


class ConfigError(TeGError, ValueError):
    """A configuration value is out of range or inconsistent."""


class FormatError(TeGError):
    """A binary file (TEGF features, TEGW checkpoint) could not be parsed."""


class BadMagicError(FormatError):
    pass


class VersionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class UndefinedMetricError(TeGError, ValueError):
    """The metric is undefined for the given labels (e.g. a single class)."""


class ProviderError(TeGError):
    """A chunk-feature provider failed; carries segment/granularity context."""


class NonFiniteLossError(TeGError, ArithmeticError):
    """Training produced a NaN/Inf loss."""


class CheckpointError(TeGError):
    """Writing a checkpoint failed during training."""


class DeliveryError(TeGError):
    """Packet endpoint misconfigured."""
