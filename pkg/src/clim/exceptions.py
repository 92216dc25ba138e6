"""Error hierarchy shared by every subsystem."""


class ClimError(Exception):
    """Base class for all errors raised by this package."""

    kind = "error"


class DimensionError(ClimError, ValueError):
    kind = "dimension"


class ContractError(ClimError, ValueError):
    """A precondition of an operation was violated by the caller."""

    kind = "contract"


class DataError(ClimError, ValueError):
    kind = "data"


class ConfigError(ClimError, ValueError):
    kind = "config"


class TrainingError(ClimError, RuntimeError):
    kind = "training"
