"""Change-class scores: confusion counts, P/R/F1/IoU/OA, ROC points and boundary accuracy."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import ndimage

from .errors import DataError, ShapeError
from .losses import boundary_map

logger = logging.getLogger(__name__)

MBA_RADII = (1, 3, 5, 7)
ROC_STEPS = 101


def default_thresholds(steps: int = ROC_STEPS) -> np.ndarray:
    """Evenly spaced thresholds from 1.0 down to 0.0."""

    return np.linspace(1.0, 0.0, steps)


def _binary(name: str, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size and not np.isin(mask, (0, 1)).all():
        raise DataError(f"{name} must hold only 0 and 1")
    return mask.astype(bool)


def _ratio(num: float, den: float) -> float:
    return float(num) / float(den) if den > 0 else 0.0


@dataclass(slots=True, frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def iou(self) -> float:
        return _ratio(self.tp, self.tp + self.fp + self.fn)

    @property
    def oa(self) -> float:
        return _ratio(self.tp + self.tn, self.total)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    pred, gt = _binary("prediction", pred), _binary("ground truth", gt)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp=tp, fp=fp, tn=int(gt.size) - tp - fp - fn, fn=fn)


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Change wherever ``prob >= threshold``."""

    return (np.asarray(prob) >= threshold).astype(np.uint8)


# ---------------------------------------------------------------------------
# ROC
# ---------------------------------------------------------------------------
def roc_counts(prob: np.ndarray, gt: np.ndarray, thresholds: Optional[Sequence[float]] = None) -> np.ndarray:
    """[T, 2] integer (tp, fp) counts per threshold; these merge across tiles by addition."""

    prob = np.asarray(prob, dtype=np.float64)
    gt = _binary("ground truth", gt)
    if prob.shape != gt.shape:
        raise ShapeError(f"probability map {prob.shape} and ground truth {gt.shape} differ in shape")
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    changed, unchanged = np.sort(prob[gt]), np.sort(prob[~gt])
    # count of values >= t is n - (number of values < t)
    tp = changed.size - np.searchsorted(changed, thresholds, side="left")
    fp = unchanged.size - np.searchsorted(unchanged, thresholds, side="left")
    return np.stack([tp, fp], axis=1).astype(np.int64)


def roc_from_counts(counts: np.ndarray, positives: int, negatives: int) -> list[tuple[float, float]]:
    return [(_ratio(int(fp), negatives), _ratio(int(tp), positives)) for tp, fp in counts]


def roc_curve(
    prob: np.ndarray,
    gt: np.ndarray,
    thresholds: Optional[Sequence[float]] = None,
) -> list[tuple[float, float]]:
    """(FPR, TPR) per threshold, predicting change where ``prob >= t``."""

    gt = _binary("ground truth", gt)
    positives = int(np.count_nonzero(gt))
    return roc_from_counts(roc_counts(prob, gt, thresholds), positives, int(gt.size) - positives)


# ---------------------------------------------------------------------------
# Boundary accuracy
# ---------------------------------------------------------------------------
def boundary_band(gt: np.ndarray, radius: int) -> np.ndarray:
    """Pixels within Chebyshev distance ``radius`` of a ground-truth boundary pixel."""

    edge = boundary_map(gt)
    if radius == 0 or not edge.any():
        return edge
    return ndimage.binary_dilation(edge, structure=np.ones((3, 3), dtype=bool), iterations=radius)


def band_accuracies(pred: np.ndarray, gt: np.ndarray, radii: Sequence[int] = MBA_RADII) -> list[float]:
    pred, gt = _binary("prediction", pred), _binary("ground truth", gt)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise ShapeError(f"mba needs two equal 2-D masks, got {pred.shape} and {gt.shape}")
    correct = pred == gt
    if not boundary_map(gt).any():
        return [float(correct.mean())] * len(radii)
    return [float(correct[band].mean()) for band in (boundary_band(gt, r) for r in radii)]


def mba(pred: np.ndarray, gt: np.ndarray, radii: Sequence[int] = MBA_RADII) -> float:
    """Mean over radii of pixel accuracy inside each boundary band.

    A mask without any label transition has no band; its score is the overall accuracy.
    """

    return float(np.mean(band_accuracies(pred, gt, radii)))


# ---------------------------------------------------------------------------
# Report
# ---------------------------------------------------------------------------
class MetricsReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tp: int = Field(ge=0)
    fp: int = Field(ge=0)
    tn: int = Field(ge=0)
    fn: int = Field(ge=0)
    precision: float = Field(ge=0.0, le=1.0)
    recall: float = Field(ge=0.0, le=1.0)
    f1: float = Field(ge=0.0, le=1.0)
    iou: float = Field(ge=0.0, le=1.0)
    oa: float = Field(ge=0.0, le=1.0)
    mba: float = Field(ge=0.0, le=1.0)
    images: int = Field(default=1, ge=0)
    roc: list[tuple[float, float]] = Field(default_factory=list)
    side_f1: dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_counts(
        cls,
        counts: ConfusionCounts,
        *,
        mba: float,
        roc: Sequence[tuple[float, float]] = (),
        images: int = 1,
        side_f1: Optional[dict[str, float]] = None,
    ) -> "MetricsReport":
        return cls(
            tp=counts.tp,
            fp=counts.fp,
            tn=counts.tn,
            fn=counts.fn,
            precision=counts.precision,
            recall=counts.recall,
            f1=counts.f1,
            iou=counts.iou,
            oa=counts.oa,
            mba=mba,
            images=images,
            roc=list(roc),
            side_f1=side_f1 or {},
        )

    def to_text(self) -> str:
        """Flat ``key = value`` lines; ROC points as ``roc.<i> = fpr,tpr``."""

        lines = [f"{key} = {value}" for key, value in self.model_dump(exclude={"roc", "side_f1"}).items()]
        lines += [f"side_f1.{name} = {value}" for name, value in self.side_f1.items()]
        lines += [f"roc.{i} = {fpr!r},{tpr!r}" for i, (fpr, tpr) in enumerate(self.roc)]
        return "\n".join(lines) + "\n"


@dataclass(slots=True)
class ImageScore:
    """Mergeable per-image evaluation state."""

    counts: ConfusionCounts
    roc: np.ndarray
    positives: int
    negatives: int
    mba: float


def score_image(
    prob: np.ndarray,
    gt: np.ndarray,
    *,
    threshold: float = 0.5,
    thresholds: Optional[Sequence[float]] = None,
) -> ImageScore:
    gt_bool = _binary("ground truth", gt)
    pred = binarize(prob, threshold)
    positives = int(np.count_nonzero(gt_bool))
    return ImageScore(
        counts=confusion(pred, gt_bool),
        roc=roc_counts(prob, gt_bool, thresholds),
        positives=positives,
        negatives=int(gt_bool.size) - positives,
        mba=mba(pred, gt_bool),
    )


def merge_scores(scores: Iterable[ImageScore], side_f1: Optional[dict[str, float]] = None) -> MetricsReport:
    """Dataset report: counts and ROC counts add exactly; mBA is the per-image mean."""

    scores = list(scores)
    if not scores:
        raise DataError("nothing to evaluate")
    counts = ConfusionCounts()
    roc = np.zeros_like(scores[0].roc)
    for score in scores:
        counts = counts + score.counts
        roc = roc + score.roc
    positives = sum(s.positives for s in scores)
    negatives = sum(s.negatives for s in scores)
    return MetricsReport.from_counts(
        counts,
        mba=float(np.mean([s.mba for s in scores])),
        roc=roc_from_counts(roc, positives, negatives),
        images=len(scores),
        side_f1=side_f1,
    )


def evaluate(
    prob: np.ndarray,
    gt: np.ndarray,
    *,
    threshold: float = 0.5,
    thresholds: Optional[Sequence[float]] = None,
) -> MetricsReport:
    """Report for a single probability map against its mask."""

    return merge_scores([score_image(prob, gt, threshold=threshold, thresholds=thresholds)])


__all__ = [
    "ConfusionCounts",
    "ImageScore",
    "MBA_RADII",
    "MetricsReport",
    "band_accuracies",
    "binarize",
    "boundary_band",
    "confusion",
    "default_thresholds",
    "evaluate",
    "mba",
    "merge_scores",
    "roc_counts",
    "roc_curve",
    "score_image",
]
