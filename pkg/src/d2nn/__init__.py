"""Diversity-aware news recommendation: a small autograd engine, a
CNN/attention news encoder, an LSTM reader encoder with diversity
attention, negative-sampling training, and accuracy/diversity metrics."""

from .errors import (
    ConfigError,
    ContractError,
    DimensionError,
    IntegrityError,
    NumericError,
    ParseError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "IntegrityError",
    "NumericError",
    "ParseError",
]

__version__ = "0.1.0"
