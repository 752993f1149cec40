"""Prediction export and directory-level scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..autograd.tensor import Tensor, no_grad
from ..errors import DataError
from ..metrics import ConfusionCounts, ImageScore, binarize, confusion, score_image
from ..nn.network import ChangeDetector
from . import raster_io
from .data import SamplePair, to_batch

logger = logging.getLogger(__name__)

PROB_DIR, BINARY_DIR, SIDES_DIR = "prob", "binary", "sides"


@dataclass(slots=True)
class Prediction:
    id: str
    probability: np.ndarray
    binary: np.ndarray
    sides: list[np.ndarray] = field(default_factory=list)


def predict(
    model: ChangeDetector,
    pairs: Sequence[SamplePair],
    *,
    threshold: float = 0.5,
    batch: int = 4,
    sides: bool = False,
) -> list[Prediction]:
    """Fused change probabilities in eval mode; change wherever ``prob >= threshold``."""

    model.eval()
    predictions = []
    with no_grad():
        for start in range(0, len(pairs), batch):
            chunk = pairs[start:start + batch]
            t1, t2, _ = to_batch(chunk)
            outputs = model(Tensor(t1), Tensor(t2))
            probs = outputs.probabilities()
            side_probs = outputs.side_probabilities() if sides else []
            for i, pair in enumerate(chunk):
                prob = probs[i].astype(np.float32)
                predictions.append(Prediction(
                    id=pair.id,
                    probability=prob,
                    binary=binarize(prob, threshold),
                    sides=[s[i].astype(np.float32) for s in side_probs],
                ))
    logger.info("predicted %d pairs", len(predictions))
    return predictions


def export_predictions(predictions: Sequence[Prediction], out_dir: str | Path) -> Path:
    """``prob/<id>.pgm`` (+ ``.f32``), ``binary/<id>.pgm`` and, when present, ``sides/<id>_side<k>.pgm``."""

    out_dir = Path(out_dir)
    for pred in predictions:
        raster_io.write_probability(out_dir / PROB_DIR / f"{pred.id}.pgm", pred.probability)
        raster_io.write_mask(out_dir / BINARY_DIR / f"{pred.id}.pgm", pred.binary)
        for level, side in enumerate(pred.sides, start=1):
            raster_io.write_probability(out_dir / SIDES_DIR / f"{pred.id}_side{level}.pgm", side)
    return out_dir


def read_prediction(pred_dir: str | Path, pair_id: str) -> np.ndarray:
    """Exact probabilities when stored, otherwise a binary map read as 0/1 probabilities.

    Binary maps are looked up under ``binary/`` and then ``mask/``, so a dataset
    folder can be scored against itself.
    """

    pred_dir = Path(pred_dir)
    prob_path = pred_dir / PROB_DIR / f"{pair_id}.pgm"
    if raster_io.sidecar_path(prob_path).exists():
        return raster_io.read_probability(prob_path)
    for folder in (BINARY_DIR, "mask"):
        candidate = pred_dir / folder / f"{pair_id}.pgm"
        if candidate.exists():
            return raster_io.read_mask(candidate).astype(np.float32)
    raise DataError(f"no prediction for {pair_id!r} under {pred_dir}")


def read_side_predictions(pred_dir: str | Path, pair_id: str) -> list[np.ndarray]:
    """Side maps of one id, finest first; empty when predict ran without them."""

    folder = Path(pred_dir) / SIDES_DIR
    maps = []
    level = 1
    while raster_io.sidecar_path(folder / f"{pair_id}_side{level}.pgm").exists():
        maps.append(raster_io.read_probability(folder / f"{pair_id}_side{level}.pgm"))
        level += 1
    return maps


@dataclass(slots=True)
class PairScore:
    score: ImageScore
    side_counts: list[ConfusionCounts] = field(default_factory=list)


def score_pair(
    pred_dir: str | Path,
    gt: SamplePair,
    *,
    threshold: float = 0.5,
    thresholds: Optional[Sequence[float]] = None,
) -> PairScore:
    """Score one stored prediction against its ground-truth pair."""

    prob = read_prediction(pred_dir, gt.id)
    if prob.shape != gt.mask.shape:
        raise DataError(f"{gt.id}: prediction {prob.shape} does not match mask {gt.mask.shape}")
    side_counts = [confusion(binarize(side, threshold), gt.mask) for side in read_side_predictions(pred_dir, gt.id)]
    return PairScore(score_image(prob, gt.mask, threshold=threshold, thresholds=thresholds), side_counts)


__all__ = [
    "PairScore",
    "Prediction",
    "export_predictions",
    "predict",
    "read_prediction",
    "read_side_predictions",
    "score_pair",
]
