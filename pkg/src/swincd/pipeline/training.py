"""Deterministic mini-batch training loop."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
from typing import Callable, Optional, Sequence

import numpy as np

from ..autograd.tensor import Tensor, backward
from ..errors import ConfigError, DataError, NumericError
from ..losses import class_frequencies, hybrid_loss
from ..metrics import ConfusionCounts, binarize, confusion
from ..nn.network import ChangeDetector, parameter_groups
from ..settings import LossConfig, TrainConfig
from .checkpoint import Checkpoint
from .data import SamplePair, augment, to_batch
from .optim import SGD, ParamGroup

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class EpochLog:
    epoch: int
    steps: int
    lr: float
    loss: float
    terms: dict[str, float]
    f1: float

    def line(self) -> str:
        terms = " ".join(f"{k}={v:.6f}" for k, v in self.terms.items())
        return f"epoch {self.epoch} steps={self.steps} lr={self.lr:.3e} loss={self.loss:.6f} {terms} f1={self.f1:.4f}"


@dataclass(slots=True)
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochLog] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)


def build_optimizer(model: ChangeDetector, cfg: TrainConfig) -> SGD:
    """Backbone at the base rate, every other module at ``head_lr_mult`` times it."""

    groups = parameter_groups(model)
    return SGD(
        [ParamGroup("encoder", groups["encoder"], 1.0), ParamGroup("head", groups["head"], cfg.head_lr_mult)],
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )


def _batches(order: np.ndarray, batch: int, min_size: int) -> list[np.ndarray]:
    chunks = [order[i:i + batch] for i in range(0, len(order), batch)]
    return [c for c in chunks if len(c) >= min_size]


class Trainer:
    """Runs SGD epochs over a fixed dataset; ``(seed, config, dataset)`` fixes the whole run."""

    def __init__(
        self,
        model: ChangeDetector,
        cfg: TrainConfig,
        loss_cfg: Optional[LossConfig] = None,
        *,
        optimizer: Optional[SGD] = None,
        start_step: int = 0,
    ) -> None:
        self.model = model
        self.cfg = cfg
        self.loss_cfg = loss_cfg or LossConfig()
        self.optimizer = optimizer or build_optimizer(model, cfg)
        self.step = start_step
        # a train-mode BatchNorm needs two values per channel at the coarsest level
        h, w = model.config.level_sides(*model.config.input_size)[-1]
        self.min_batch = max(1, math.ceil(2 / (h * w)))
        if cfg.batch < self.min_batch:
            raise ConfigError(
                f"train.batch {cfg.batch} leaves a single value per channel at the {h}x{w} coarsest level; "
                f"use at least {self.min_batch}"
            )

    def fit(self, dataset: Sequence[SamplePair], on_epoch: Optional[Callable[[EpochLog], None]] = None) -> TrainResult:
        if not dataset:
            raise DataError("training needs at least one sample pair")
        cfg = self.cfg
        rng = np.random.default_rng(cfg.seed)
        frequencies = None
        if self.loss_cfg.frequency_mode == "dataset":
            frequencies = class_frequencies([p.mask for p in dataset])
            logger.info("dataset class frequencies: unchanged=%.4f changed=%.4f", *frequencies)
        result = TrainResult(checkpoint=Checkpoint.capture(self.model, self.optimizer, cfg, self.step))
        if cfg.max_steps is not None and self.step >= cfg.max_steps:
            logger.info("already at step %d of train.max_steps=%d; nothing to train", self.step, cfg.max_steps)
            return result
        self.model.train()
        logger.info("training on %d pairs for %d epochs (batch %d)", len(dataset), cfg.epochs, cfg.batch)

        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.lr_at(epoch)
            batches = _batches(rng.permutation(len(dataset)), cfg.batch, self.min_batch)
            if not batches:
                raise DataError(f"{len(dataset)} pairs do not fill a single batch of at least {self.min_batch}")
            totals: dict[str, float] = {}
            loss_sum, counts, steps = 0.0, ConfusionCounts(), 0
            for indices in batches:
                pairs = [dataset[int(i)] for i in indices]
                if cfg.augment:
                    pairs = [augment(p, rng) for p in pairs]
                loss, breakdown, batch_counts = self._step(pairs, lr, frequencies)
                result.step_losses.append(loss)
                loss_sum += loss
                counts = counts + batch_counts
                for term, value in breakdown.items():
                    totals[term] = totals.get(term, 0.0) + value
                steps += 1
                if cfg.max_steps is not None and self.step >= cfg.max_steps:
                    break
            log = EpochLog(
                epoch=epoch,
                steps=steps,
                lr=lr,
                loss=loss_sum / steps,
                terms={k: v / steps for k, v in totals.items()},
                f1=counts.f1,
            )
            result.history.append(log)
            logger.info(log.line())
            if on_epoch is not None:
                on_epoch(log)
            if cfg.max_steps is not None and self.step >= cfg.max_steps:
                logger.info("stopping after %d steps", self.step)
                break

        result.checkpoint = Checkpoint.capture(self.model, self.optimizer, cfg, self.step)
        return result

    def _step(
        self,
        pairs: Sequence[SamplePair],
        lr: float,
        frequencies: Optional[tuple[float, float]],
    ) -> tuple[float, dict[str, float], ConfusionCounts]:
        t1, t2, masks = to_batch(pairs)
        self.optimizer.zero_grad()
        outputs = self.model(Tensor(t1), Tensor(t2))
        loss, breakdown = hybrid_loss(outputs, masks, self.loss_cfg, frequencies=frequencies)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"loss became {value} at step {self.step + 1}; {breakdown.summary()}")
        backward(loss)
        self.optimizer.step(lr)
        self.step += 1
        logger.debug("step %d lr=%.3e %s", self.step, lr, breakdown.summary())
        counts = confusion(binarize(outputs.probabilities(), self.cfg.threshold), masks.astype(np.uint8))
        return value, breakdown.per_term, counts


def train(
    model: ChangeDetector,
    dataset: Sequence[SamplePair],
    cfg: TrainConfig,
    loss_cfg: Optional[LossConfig] = None,
) -> TrainResult:
    return Trainer(model, cfg, loss_cfg).fit(dataset)


__all__ = ["EpochLog", "TrainResult", "Trainer", "build_optimizer", "train"]
