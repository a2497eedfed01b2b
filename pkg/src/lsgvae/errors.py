"""Exception hierarchy shared by every module."""


class LSGError(Exception):
    """Base class for errors raised by this package."""


class DimensionError(LSGError, ValueError):
    """Operand shapes are incompatible."""


class DomainError(LSGError, ValueError):
    """A value lies outside an operation's domain, or a result is not finite."""


class ContractError(LSGError, ValueError):
    """A documented precondition was violated by the caller."""


class IngestionError(LSGError, ValueError):
    """A data cell could not be parsed."""


class FormatError(LSGError, ValueError):
    """A file is structurally malformed (ragged CSV, corrupt checkpoint)."""


class ConfigurationError(LSGError, ValueError):
    """A configuration value is invalid or inconsistent with the data."""


class CompatibilityError(ConfigurationError):
    """A checkpoint does not match the data or configuration it is used with."""


class TrainingError(LSGError, RuntimeError):
    """Training produced a non-finite loss or gradient."""


class UndefinedMetricError(LSGError, ValueError):
    """A metric is mathematically undefined for the given inputs."""
