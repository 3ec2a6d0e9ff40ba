"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class ConfigError(ValueError):
    """A configuration value or file is invalid."""


class InsufficientDataError(ValueError):
    """Not enough samples to compute a statistic."""
