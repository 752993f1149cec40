"""Configuration objects for the network, the hybrid loss, training and runtime."""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
import os
from typing import Optional, Sequence

from .errors import ConfigError, ContractError

NUM_LEVELS = 5
PATCH_SIZE = 4
HEAD_KINDS = ("deconv", "nearest")
DECODER_KINDS = ("pcp", "fp")
LOSS_TERMS = ("bce", "wbce", "ssim", "siou")
LR_DECAY_MODES = ("multiplicative", "initial_relative")


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


class _Overridable:
    """Mixin giving frozen dataclasses a validated ``override`` copy."""

    __slots__ = ()

    def override(self, **kwargs: object):
        unknown = sorted(set(kwargs) - {f.name for f in fields(self)})
        if unknown:
            raise ConfigError(f"Unknown {type(self).__name__} fields: {', '.join(unknown)}")
        return replace(self, **kwargs)

    def as_dict(self) -> dict[str, object]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(slots=True, frozen=True)
class ModelConfig(_Overridable):
    """Architecture hyperparameters of the Siamese change detector.

    ``stage_depths`` and ``stage_heads`` list the four Swin stages plus the extra
    fifth stage that produces the coarsest pyramid level.
    """

    base_dim: int = 16
    stage_depths: tuple[int, ...] = (2, 2, 2, 2, 2)
    stage_heads: tuple[int, ...] = (2, 2, 2, 2, 2)
    window: int = 4
    decoder_depth: int = 4
    decoder_depths: Optional[tuple[int, ...]] = None
    decoder_heads: int = 2
    pool_sizes: tuple[int, ...] = (3, 5, 7, 9)
    input_size: tuple[int, int] = (64, 64)
    rel_bias: bool = True
    head_kind: str = "deconv"
    decoder_kind: str = "pcp"
    use_dfe: bool = True
    mlp_ratio: float = 4.0
    in_channels: int = 3
    ln_eps: float = 1e-5
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.base_dim > 0, "model.base_dim must be positive")
        _require(len(self.stage_depths) == NUM_LEVELS, "model.stage_depths needs 5 entries")
        _require(len(self.stage_heads) == NUM_LEVELS, "model.stage_heads needs 5 entries")
        _require(all(d > 0 and d % 2 == 0 for d in self.stage_depths),
                 "model.stage_depths entries must be positive and even (W/SW pairs)")
        for level, heads in enumerate(self.stage_heads):
            width = self.base_dim * 2 ** level
            _require(heads > 0 and width % heads == 0,
                     f"stage {level + 1} width {width} is not divisible by {heads} heads")
        _require(self.base_dim % self.decoder_heads == 0,
                 f"model.base_dim {self.base_dim} is not divisible by {self.decoder_heads} decoder heads")
        _require(self.window >= 1, "model.window must be >= 1")
        _require(len(self.decoder_transition_depths) == NUM_LEVELS - 1,
                 "model.decoder_depths needs 4 entries")
        _require(all(d > 0 and d % 2 == 0 for d in self.decoder_transition_depths),
                 "decoder depths must be positive and even (W/SW pairs)")
        _require(len(self.pool_sizes) > 0 and all(m >= 1 and m % 2 == 1 for m in self.pool_sizes),
                 "model.pool_sizes must be odd and >= 1")
        _require(self.head_kind in HEAD_KINDS, f"model.head_kind must be one of {HEAD_KINDS}")
        _require(self.decoder_kind in DECODER_KINDS,
                 f"model.decoder_kind must be one of {DECODER_KINDS}")
        _require(self.mlp_ratio > 0, "model.mlp_ratio must be positive")
        _require(self.ln_eps > 0 and self.bn_eps > 0, "normalization eps must be positive")
        _require(0.0 < self.bn_momentum <= 1.0, "model.bn_momentum must be in (0, 1]")
        self.check_input_size(*self.input_size)

    @classmethod
    def toy(cls, **kwargs: object) -> "ModelConfig":
        """64×64 inputs, C=16, M=4, two heads, decoder depth 2."""

        return cls(**{"decoder_depth": 2, **kwargs})

    @property
    def decoder_transition_depths(self) -> tuple[int, ...]:
        """Decoder Swin depths ordered coarse to fine (5→4, 4→3, 3→2, 2→1)."""

        if self.decoder_depths is not None:
            return tuple(self.decoder_depths)
        return (self.decoder_depth,) * (NUM_LEVELS - 1)

    @property
    def level_scales(self) -> tuple[int, ...]:
        return tuple(PATCH_SIZE * 2 ** k for k in range(NUM_LEVELS))

    @property
    def branch_channels(self) -> int:
        """Channels of each DFE branch output."""

        if not self.use_dfe:
            return self.base_dim
        return self.base_dim * (1 + len(self.pool_sizes))

    def effective_window(self, height: int, width: int) -> int:
        """Window side of a stage on an h×w map; small maps use one whole-map window."""

        return min(self.window, height, width)

    def effective_shift(self, height: int, width: int) -> int:
        return 0 if min(height, width) <= self.window else self.window // 2

    def level_sides(self, height: int, width: int) -> list[tuple[int, int]]:
        return [(height // s, width // s) for s in self.level_scales]

    def check_input_size(self, height: int, width: int) -> None:
        """Raise ``ContractError`` unless every level tiles into whole windows."""

        coarsest = self.level_scales[-1]
        if height % coarsest or width % coarsest or height <= 0 or width <= 0:
            raise ContractError(
                f"input {height}x{width} must be a positive multiple of {coarsest} "
                f"(stride-{PATCH_SIZE} embedding followed by {NUM_LEVELS - 1} halvings)"
            )
        for level, (h, w) in enumerate(self.level_sides(height, width), start=1):
            window = self.effective_window(h, w)
            for side in (h, w):
                if side % window:
                    raise ContractError(
                        f"level {level} side {side} is not divisible by window {window}; "
                        f"choose an input size divisible by {PATCH_SIZE * self.window * 2 ** (NUM_LEVELS - 1)}"
                    )


@dataclass(slots=True, frozen=True)
class LossConfig(_Overridable):
    """Weights and constants of the deeply supervised hybrid loss."""

    boundary_weight: float = 2.0
    ssim_patch: int = 11
    ssim_eps: float = 1e-4
    alpha: tuple[float, ...] = (1.0,) * NUM_LEVELS
    prob_clamp: float = 1e-7
    siou_eps: float = 1e-8
    terms: tuple[str, ...] = ("wbce", "ssim", "siou")
    frequency_mode: str = "batch"

    def __post_init__(self) -> None:
        _require(self.boundary_weight >= 0, "loss.boundary_weight must be >= 0")
        _require(self.ssim_patch >= 1 and self.ssim_patch % 2 == 1, "loss.ssim_patch must be odd")
        _require(self.ssim_eps > 0, "loss.ssim_eps must be positive")
        _require(len(self.alpha) == NUM_LEVELS, "loss.alpha needs 5 entries")
        _require(all(a >= 0 for a in self.alpha), "loss.alpha entries must be >= 0")
        _require(0 < self.prob_clamp < 0.5, "loss.prob_clamp must be in (0, 0.5)")
        _require(len(self.terms) > 0 and set(self.terms) <= set(LOSS_TERMS),
                 f"loss.terms must be a non-empty subset of {LOSS_TERMS}")
        _require(not {"bce", "wbce"} <= set(self.terms), "loss.terms cannot hold both bce and wbce")
        _require(self.frequency_mode in ("batch", "dataset"),
                 "loss.frequency_mode must be 'batch' or 'dataset'")


@dataclass(slots=True, frozen=True)
class TrainConfig(_Overridable):
    """Mini-batch SGD schedule."""

    lr0: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch: int = 2
    epochs: int = 20
    lr_step: int = 20
    lr_factor: float = 0.1
    lr_decay: str = "multiplicative"
    head_lr_mult: float = 10.0
    max_steps: Optional[int] = None
    augment: bool = True
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        _require(self.lr0 > 0, "train.lr0 must be positive")
        _require(0 <= self.momentum < 1, "train.momentum must be in [0, 1)")
        _require(self.weight_decay >= 0, "train.weight_decay must be >= 0")
        _require(self.batch >= 1, "train.batch must be >= 1")
        _require(self.epochs >= 1, "train.epochs must be >= 1")
        _require(self.lr_step >= 1, "train.lr_step must be >= 1")
        _require(0 < self.lr_factor <= 1, "train.lr_factor must be in (0, 1]")
        _require(self.lr_decay in LR_DECAY_MODES, f"train.lr_decay must be one of {LR_DECAY_MODES}")
        _require(self.head_lr_mult > 0, "train.head_lr_mult must be positive")
        _require(self.max_steps is None or self.max_steps >= 1, "train.max_steps must be >= 1")
        _require(0 <= self.threshold <= 1, "train.threshold must be in [0, 1]")
        _require(0 <= self.seed < 2 ** 32, "train.seed must fit in 32 bits")

    def lr_at(self, epoch: int) -> float:
        """Base learning rate of a 1-based epoch.

        Epochs 1..lr_step run at lr0; each later block of ``lr_step`` epochs is
        scaled by ``lr_factor`` once more (multiplicative) or held at
        ``lr0 * lr_factor`` (initial_relative).
        """

        if epoch < 1:
            raise ConfigError(f"epochs are 1-based, got {epoch}")
        decays = (epoch - 1) // self.lr_step
        if self.lr_decay == "initial_relative":
            decays = min(decays, 1)
        return self.lr0 * self.lr_factor ** decays


@dataclass(slots=True, frozen=True)
class RuntimeSettings(_Overridable):
    """Process-level knobs read from the environment."""

    log_level: str = "INFO"
    workers: int = 4
    precision: int = 32

    @classmethod
    def from_env(cls) -> "RuntimeSettings":
        """Build settings from ``SWINCD_*`` environment variables."""

        def _env(keys: Sequence[str] | str, default: str) -> str:
            candidates = (keys,) if isinstance(keys, str) else tuple(keys)
            for key in candidates:
                value = os.getenv(key)
                if value not in (None, ""):
                    return value
            return default

        try:
            settings = cls(
                log_level=_env(("SWINCD_LOG_LEVEL", "LOG_LEVEL"), "INFO").upper(),
                workers=int(_env("SWINCD_WORKERS", "4")),
                precision=int(_env("SWINCD_PRECISION", "32")),
            )
        except ValueError as exc:
            raise ConfigError(f"Invalid SWINCD_* environment value: {exc}") from exc
        if settings.precision not in (32, 64):
            raise ConfigError(f"SWINCD_PRECISION must be 32 or 64, got {settings.precision}")
        if settings.workers < 1:
            raise ConfigError(f"SWINCD_WORKERS must be >= 1, got {settings.workers}")
        return settings


__all__ = [
    "DECODER_KINDS",
    "HEAD_KINDS",
    "LOSS_TERMS",
    "LossConfig",
    "ModelConfig",
    "NUM_LEVELS",
    "PATCH_SIZE",
    "RuntimeSettings",
    "TrainConfig",
]
