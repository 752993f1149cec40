"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class SwinCDError(Exception):
    """Base class for every error raised on purpose by swincd."""


class ConfigError(SwinCDError, ValueError):
    """A configuration value or key is invalid."""


class ShapeError(SwinCDError, ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class ContractError(ShapeError):
    """An input extent violates the network's size contract."""


class DataError(SwinCDError, ValueError):
    """A raster, manifest or dataset cannot be used."""


class CheckpointError(DataError):
    """A checkpoint file is corrupt or does not fit the model."""


class NumericError(SwinCDError, ArithmeticError):
    """Non-finite values, divergence or a failed gradient check."""


__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "NumericError",
    "ShapeError",
    "SwinCDError",
]
