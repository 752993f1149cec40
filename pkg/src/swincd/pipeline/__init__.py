"""Data handling, persistence, optimisation, training and prediction."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import SamplePair, augment, resize_pair, stitch, synth_dataset, tile
from .inference import Prediction, export_predictions, predict
from .optim import SGD, ParamGroup
from .training import EpochLog, Trainer, TrainResult, train

__all__ = [
    "Checkpoint",
    "EpochLog",
    "ParamGroup",
    "Prediction",
    "SGD",
    "SamplePair",
    "TrainResult",
    "Trainer",
    "augment",
    "export_predictions",
    "load_checkpoint",
    "predict",
    "resize_pair",
    "save_checkpoint",
    "stitch",
    "synth_dataset",
    "tile",
    "train",
]
