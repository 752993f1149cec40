"""Deeply supervised hybrid objective: weighted BCE, patch SSIM and soft IoU per output map."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Callable, Optional, Sequence

import numpy as np

from .autograd import ops
from .autograd.tensor import Tensor
from .errors import DataError, ShapeError
from .nn.network import SideOutputs
from .settings import NUM_LEVELS, LossConfig

logger = logging.getLogger(__name__)

OUTPUT_NAMES = ("fused",) + tuple(f"side{k}" for k in range(1, NUM_LEVELS + 1))


def _as_mask(gt: np.ndarray) -> np.ndarray:
    gt = np.asarray(gt)
    if gt.size and not np.isin(gt, (0, 1)).all():
        raise DataError("change masks must hold only 0 and 1")
    return gt.astype(np.float64)


def _batched(gt: np.ndarray, like: Tensor) -> np.ndarray:
    """Match a [N, H, W] or [H, W] mask to the layout of a [N, 1, H, W] map."""

    gt = np.asarray(gt)
    if gt.shape == like.shape:
        return gt
    if gt.ndim == like.ndim - 1 and like.shape[1] == 1 and gt.shape == like.shape[:1] + like.shape[2:]:
        return gt[:, None]
    raise ShapeError(f"mask shape {gt.shape} does not match prediction shape {like.shape}")


# ---------------------------------------------------------------------------
# Pixel weights
# ---------------------------------------------------------------------------
def class_frequencies(masks: np.ndarray | Sequence[np.ndarray]) -> tuple[float, float]:
    """Fractions of unchanged and changed pixels over every mask given."""

    if isinstance(masks, np.ndarray):
        flat = _as_mask(masks).reshape(-1)
    else:
        flat = np.concatenate([_as_mask(m).reshape(-1) for m in masks]) if len(masks) else np.zeros(0)
    if flat.size == 0:
        raise DataError("cannot compute class frequencies of an empty mask set")
    changed = float(flat.mean())
    return 1.0 - changed, changed


def boundary_map(gt: np.ndarray) -> np.ndarray:
    """1 where some 4-neighbour inside the same image carries the other label."""

    gt = np.asarray(gt)
    edge = np.zeros(gt.shape, dtype=bool)
    rows = gt[..., 1:, :] != gt[..., :-1, :]
    cols = gt[..., :, 1:] != gt[..., :, :-1]
    edge[..., 1:, :] |= rows
    edge[..., :-1, :] |= rows
    edge[..., :, 1:] |= cols
    edge[..., :, :-1] |= cols
    return edge


@dataclass(slots=True)
class PixelWeights:
    values: np.ndarray
    class_weights: tuple[float, float]
    frequencies: tuple[float, float]


def compute_weights(
    gt: np.ndarray,
    w0: float = 2.0,
    frequencies: Optional[Sequence[float]] = None,
) -> PixelWeights:
    """Median-frequency class weights plus ``w0`` on label transitions.

    ``frequencies`` defaults to the class fractions of ``gt`` itself. An absent
    class gets no weight of its own and the present one gets exactly 1.
    """

    mask = _as_mask(gt)
    if w0 < 0:
        raise DataError(f"boundary weight must be >= 0, got {w0}")
    f = tuple(float(v) for v in (frequencies if frequencies is not None else class_frequencies(mask)))
    if len(f) != 2 or min(f) < 0:
        raise DataError(f"expected two nonnegative class frequencies, got {f}")
    if min(f) == 0.0:
        class_weights = tuple(1.0 if v > 0 else 0.0 for v in f)
    else:
        median = float(np.median(f))
        class_weights = (median / f[0], median / f[1])
    values = np.where(mask > 0, class_weights[1], class_weights[0]) + w0 * boundary_map(mask)
    return PixelWeights(values, class_weights, f)  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------
def wbce(
    logits: Tensor,
    gt: np.ndarray,
    weights: Optional[np.ndarray] = None,
    *,
    prob_clamp: float = 1e-7,
) -> Tensor:
    """Pixel-weighted two-class cross-entropy, averaged over pixels."""

    g = _batched(_as_mask(gt), logits)
    w = np.ones(logits.shape) if weights is None else _batched(np.asarray(weights, dtype=np.float64), logits)
    p = ops.clamp(ops.sigmoid(logits), prob_clamp, 1.0 - prob_clamp)
    per_pixel = ops.log(p) * g + ops.log(1.0 - p) * (1.0 - g)
    return -ops.mean(per_pixel * w)


def ssim_loss(prob: Tensor, gt: np.ndarray, cfg: Optional[LossConfig] = None) -> Tensor:
    """One minus the mean SSIM of all dense patch positions inside the map."""

    cfg = cfg or LossConfig()
    n, eps = cfg.ssim_patch, cfg.ssim_eps
    y = Tensor(_batched(np.asarray(gt, dtype=np.float64), prob), dtype=prob.dtype)
    mu_x, mu_y = ops.box_mean(prob, n), ops.box_mean(y, n)
    var_x = ops.box_mean(prob * prob, n) - mu_x * mu_x
    var_y = ops.box_mean(y * y, n) - mu_y * mu_y
    cov = ops.box_mean(prob * y, n) - mu_x * mu_y
    numerator = (mu_x * mu_y * 2.0 + eps) * (cov * 2.0 + eps)
    denominator = (mu_x * mu_x + mu_y * mu_y + eps) * (var_x + var_y + eps)
    return 1.0 - ops.mean(numerator / denominator)


def siou_loss(prob: Tensor, gt: np.ndarray, *, eps: float = 1e-8) -> Tensor:
    """Soft IoU loss computed per sample and averaged over the batch."""

    g = _batched(_as_mask(gt), prob)
    axes = tuple(range(1, prob.ndim))
    intersection = ops.sum(prob * g, axis=axes)
    union = ops.sum(prob + g - prob * g, axis=axes)
    return 1.0 - ops.mean(intersection / (union + eps))


# ---------------------------------------------------------------------------
# Hybrid objective
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class LossBreakdown:
    """Scalar values behind one hybrid loss evaluation."""

    total: float
    per_output: dict[str, dict[str, float]] = field(default_factory=dict)
    alpha: tuple[float, ...] = ()

    @property
    def per_term(self) -> dict[str, float]:
        """Each term summed over outputs with the same level weights as the total."""

        terms: dict[str, float] = {}
        for name, values in self.per_output.items():
            scale = 1.0 if name == "fused" else self.alpha[OUTPUT_NAMES.index(name) - 1]
            for term, value in values.items():
                terms[term] = terms.get(term, 0.0) + scale * value
        return terms

    def summary(self) -> str:
        parts = " ".join(f"{term}={value:.6f}" for term, value in self.per_term.items())
        return f"total={self.total:.6f} {parts}"


def _output_loss(
    logits: Tensor,
    gt: np.ndarray,
    weights: np.ndarray,
    cfg: LossConfig,
) -> tuple[Tensor, dict[str, float]]:
    prob = ops.sigmoid(logits)
    builders: dict[str, Callable[[], Tensor]] = {
        "bce": lambda: wbce(logits, gt, None, prob_clamp=cfg.prob_clamp),
        "wbce": lambda: wbce(logits, gt, weights, prob_clamp=cfg.prob_clamp),
        "ssim": lambda: ssim_loss(prob, gt, cfg),
        "siou": lambda: siou_loss(prob, gt, eps=cfg.siou_eps),
    }
    values = {term: builders[term]() for term in cfg.terms}
    total = values[cfg.terms[0]]
    for term in cfg.terms[1:]:
        total = total + values[term]
    return total, {term: value.item() for term, value in values.items()}


def hybrid_loss(
    outputs: SideOutputs,
    gt: np.ndarray,
    cfg: Optional[LossConfig] = None,
    *,
    frequencies: Optional[Sequence[float]] = None,
) -> tuple[Tensor, LossBreakdown]:
    """Fused loss plus the ``alpha``-weighted side losses.

    ``frequencies`` carries dataset-level class fractions; without it the
    batch's own masks set the median-frequency weights.
    """

    cfg = cfg or LossConfig()
    mask = _as_mask(gt)
    if cfg.frequency_mode == "dataset" and frequencies is None:
        raise DataError("dataset frequency mode needs precomputed class frequencies")
    if frequencies is None and min(class_frequencies(mask)) == 0.0:
        logger.warning("single-class batch: class weights fall back to 1")
    weights = compute_weights(mask, cfg.boundary_weight, frequencies).values

    total, values = _output_loss(outputs.fused, mask, weights, cfg)
    breakdown = LossBreakdown(total=0.0, per_output={"fused": values}, alpha=tuple(cfg.alpha))
    for name, alpha, logits in zip(OUTPUT_NAMES[1:], cfg.alpha, outputs.sides):
        side_total, values = _output_loss(logits, mask, weights, cfg)
        breakdown.per_output[name] = values
        if alpha:
            total = total + side_total * alpha
    breakdown.total = total.item()
    return total, breakdown


__all__ = [
    "LossBreakdown",
    "OUTPUT_NAMES",
    "PixelWeights",
    "boundary_map",
    "class_frequencies",
    "compute_weights",
    "hybrid_loss",
    "siou_loss",
    "ssim_loss",
    "wbce",
]
