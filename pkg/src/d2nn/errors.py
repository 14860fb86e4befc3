"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class NumericError(ArithmeticError):
    """A non-finite value (NaN/Inf) appeared where only finite values are allowed."""


class ContractError(RuntimeError):
    """An API was used outside its contract (e.g. backward on a non-scalar)."""


class ParseError(ValueError):
    """A data file is malformed; the message names the offending line."""


class ConfigError(ValueError):
    """A run configuration is invalid or contains unknown keys."""


class IntegrityError(RuntimeError):
    """A checkpoint file is corrupt or inconsistent with the model."""
