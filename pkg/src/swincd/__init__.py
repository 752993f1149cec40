"""Siamese Swin change detection on a small numpy tensor engine."""

from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    NumericError,
    ShapeError,
    SwinCDError,
)
from .settings import LossConfig, ModelConfig, RuntimeSettings, TrainConfig

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "LossConfig",
    "ModelConfig",
    "NumericError",
    "RuntimeSettings",
    "ShapeError",
    "SwinCDError",
    "TrainConfig",
    "__version__",
]
