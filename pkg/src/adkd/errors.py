"""Exception types shared across the package."""

from .core.tensor import ContractError, DimensionError


class ConfigError(ValueError):
    """Invalid configuration value or combination."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given input (e.g. a single class)."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


__all__ = ["ConfigError", "ContractError", "DimensionError", "TrainingDiverged", "UndefinedMetricError"]
