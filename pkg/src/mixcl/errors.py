"""Exception hierarchy shared by every stage of the pipeline."""


class MixCLError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ConfigError(MixCLError, ValueError):
    exit_code = 2


class IngestionError(MixCLError, ValueError):
    """A corpus or dialogue file could not be read or violates its schema."""

    exit_code = 2


class DependencyError(MixCLError):
    """A pipeline stage was started before the artifact it consumes exists."""

    exit_code = 3


class NumericalFailure(MixCLError, FloatingPointError):
    exit_code = 4


class MixFailure(MixCLError):
    """No span type is shared between a positive and a negative snippet."""


class EmptyNegativePool(MixCLError):
    """Neither the retrieved nor the generated pool holds a candidate."""
