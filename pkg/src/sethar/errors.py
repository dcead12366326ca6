"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class EmptyInputError(ValueError):
    """No usable data: zero valid rows, or a segment with no readings."""


class StratificationError(ValueError):
    """A class has too few segments to fill every fold."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or out of range."""


class TrainingDataError(ValueError):
    """Training data does not cover the declared activity space."""


class ModelLoadError(ValueError):
    """A model file is missing fields, version-mismatched, or corrupt."""
