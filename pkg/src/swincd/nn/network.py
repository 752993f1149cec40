"""The Siamese change detector: shared Swin encoder, feature enhancement, attention decoder, heads.

Data flow for an image pair of size H×W:

    t1, t2 ──► SiameseEncoder ──► two FeaturePyramids (C channels at H/4 … H/64)
           ──► DeepFeatureEnhancement ──► summation / difference maps per level
           ──► ProgressiveAttention   ──► F_A per level (C channels)
           ──► ProgressiveDecoder     ──► F_P per level, coarse to fine
           ──► PredictionHeads        ──► SideOutputs (five side logits + fused logits)
"""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Iterator, Optional, Sequence

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import ContractError, ShapeError
from ..settings import NUM_LEVELS, PATCH_SIZE, ModelConfig
from .layers import Conv2d, ConvBNReLU, ConvTranspose2d, upsample_nearest
from .module import Module, ModuleList
from .swin import PatchEmbed, PatchMerge, PatchUnmerge, SwinStage, SwinStageConfig

logger = logging.getLogger(__name__)


def _to_channels_first(x: Tensor) -> Tensor:
    return ops.permute(x, (0, 3, 1, 2))


def _to_channels_last(x: Tensor) -> Tensor:
    return ops.permute(x, (0, 2, 3, 1))


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class FeaturePyramid:
    """Encoder levels E^1..E^5, NCHW, finest first."""

    levels: tuple[Tensor, ...]

    def __post_init__(self) -> None:
        if len(self.levels) != NUM_LEVELS:
            raise ShapeError(f"a pyramid has {NUM_LEVELS} levels, got {len(self.levels)}")
        channels = self.levels[0].shape[1]
        for k in range(1, NUM_LEVELS):
            prev, cur = self.levels[k - 1].shape, self.levels[k].shape
            if cur[1] != channels:
                raise ShapeError(f"level {k + 1} has {cur[1]} channels, level 1 has {channels}")
            if (prev[2], prev[3]) != (2 * cur[2], 2 * cur[3]):
                raise ShapeError(f"level {k + 1} extent {cur[2:]} is not half of {prev[2:]}")

    def __getitem__(self, index: int) -> Tensor:
        return self.levels[index]

    def __iter__(self) -> Iterator[Tensor]:
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)


@dataclass(slots=True)
class SideOutputs:
    """Logit maps P^1..P^5 and the fused P^f, all [N, 1, H, W]."""

    sides: tuple[Tensor, ...]
    fused: Tensor

    @property
    def maps(self) -> tuple[Tensor, ...]:
        """Fused map first, then the side maps finest to coarsest."""

        return (self.fused, *self.sides)

    def probabilities(self) -> np.ndarray:
        """Sigmoid of the fused logits as a plain array [N, H, W]."""

        return ops.sigmoid(self.fused).numpy()[:, 0]

    def side_probabilities(self) -> list[np.ndarray]:
        return [ops.sigmoid(side).numpy()[:, 0] for side in self.sides]


@dataclass(slots=True)
class EnhancedFeatures:
    """Per-level DFE outputs; ``*_base`` hold the maps before contrast features."""

    summation: tuple[Tensor, ...]
    difference: tuple[Tensor, ...]
    summation_base: tuple[Tensor, ...]
    difference_base: tuple[Tensor, ...]


@dataclass(slots=True)
class ForwardTrace:
    """Every intermediate a forward pass produced, for audits and diagnostics."""

    pyramid_t1: FeaturePyramid
    pyramid_t2: FeaturePyramid
    enhanced: EnhancedFeatures
    attended: tuple[Tensor, ...]
    decoded: tuple[Tensor, ...]
    outputs: SideOutputs


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------
class SiameseEncoder(Module):
    """One Swin backbone applied to both dates; lateral 1×1 convs project every level to C."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.config = config
        height, width = config.input_size
        sides = config.level_sides(height, width)
        c = config.base_dim
        self.embed = PatchEmbed(config.in_channels, c, rng, patch=PATCH_SIZE, eps=config.ln_eps)
        self.merges = ModuleList()
        self.stages = ModuleList()
        self.laterals = ModuleList()
        for level in range(NUM_LEVELS):
            dim = c * 2 ** level
            if level > 0:
                self.merges.append(PatchMerge(dim // 2, rng, eps=config.ln_eps))
            stage_cfg = SwinStageConfig(
                dim=dim,
                heads=config.stage_heads[level],
                window=config.window,
                depth=config.stage_depths[level],
                mlp_ratio=config.mlp_ratio,
                use_rel_bias=config.rel_bias,
                ln_eps=config.ln_eps,
            )
            self.stages.append(SwinStage(stage_cfg, sides[level], rng))
            self.laterals.append(Conv2d(dim, c, 1, rng))

    def __call__(self, image: Tensor) -> FeaturePyramid:
        n = image.shape[0]
        h, w = self.config.level_sides(*image.shape[2:])[0]
        x = ops.reshape(self.embed(image), (n, h, w, self.config.base_dim))
        levels = []
        for level in range(NUM_LEVELS):
            if level > 0:
                x = self.merges[level - 1](x)
            x = self.stages[level](x)
            levels.append(self.laterals[level](_to_channels_first(x)))
        return FeaturePyramid(tuple(levels))

    def forward_pair(self, t1: Tensor, t2: Tensor) -> tuple[FeaturePyramid, FeaturePyramid]:
        """Run both dates through the same parameters, one after the other."""

        return self(t1), self(t2)


# ---------------------------------------------------------------------------
# Deep feature enhancement
# ---------------------------------------------------------------------------
class EnhancementLevel(Module):
    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        c = config.base_dim
        self.pool_sizes = config.pool_sizes if config.use_dfe else ()
        self.summation = ConvBNReLU(c, c, rng, eps=config.bn_eps, momentum=config.bn_momentum)
        self.difference = ConvBNReLU(c, c, rng, eps=config.bn_eps, momentum=config.bn_momentum)

    def contrast(self, base: Tensor) -> Tensor:
        """Base map followed by one ``x - Pool^m(x)`` map per pool size."""

        if not self.pool_sizes:
            return base
        return ops.concat_channel([base] + [ops.avg_pool_contrast(base, m) for m in self.pool_sizes])

    def __call__(self, e1: Tensor, e2: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        sum_base = self.summation(e1 + e2)
        diff_base = self.difference(e1 - e2)
        return self.contrast(sum_base), self.contrast(diff_base), sum_base, diff_base


class DeepFeatureEnhancement(Module):
    """Per-level summation and difference branches with multi-scale contrast maps."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.levels = ModuleList([EnhancementLevel(config, rng) for _ in range(NUM_LEVELS)])

    def __call__(self, p1: FeaturePyramid, p2: FeaturePyramid) -> EnhancedFeatures:
        if len(p1) != len(p2):
            raise ShapeError(f"pyramids have {len(p1)} and {len(p2)} levels")
        results = []
        for level, (e1, e2) in enumerate(zip(p1, p2), start=1):
            if e1.shape != e2.shape:
                raise ShapeError(f"level {level} features differ: {e1.shape} vs {e2.shape}")
            results.append(self.levels[level - 1](e1, e2))
        summation, difference, sum_base, diff_base = (tuple(part) for part in zip(*results))
        return EnhancedFeatures(summation, difference, sum_base, diff_base)


# ---------------------------------------------------------------------------
# Progressive attention and decoding
# ---------------------------------------------------------------------------
class ProgressiveAttention(Module):
    """Joint spatial and channel gating of the fused branches with a residual path."""

    def __init__(self, in_channels: int, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        c = config.base_dim
        self.fuse = ConvBNReLU(in_channels, c, rng, eps=config.bn_eps, momentum=config.bn_momentum)
        self.spatial_gate = Conv2d(1, 1, 1, rng)
        self.channel_gate = Conv2d(c, c, 1, rng)
        self.out = Conv2d(c, c, 1, rng)

    def gates(self, fused: Tensor) -> tuple[Tensor, Tensor]:
        """Spatial gate [N, 1, H, W] and channel gate [N, C, 1, 1], both in (0, 1)."""

        spatial = ops.sigmoid(self.spatial_gate(ops.sum_channel(fused)))
        channel = ops.sigmoid(self.channel_gate(ops.global_avg_pool(fused)))
        return spatial, channel

    def __call__(self, summation: Tensor, difference: Tensor) -> Tensor:
        fused = self.fuse(ops.concat_channel([summation, difference]))
        spatial, channel = self.gates(fused)
        return self.out(fused * spatial + fused * channel + fused)


class PlainFusion(Module):
    """Attention-free variant: a single 1×1 convolution of the two branches."""

    def __init__(self, in_channels: int, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.conv = Conv2d(in_channels, config.base_dim, 1, rng)

    def __call__(self, summation: Tensor, difference: Tensor) -> Tensor:
        return self.conv(ops.concat_channel([summation, difference]))


class ProgressiveDecoder(Module):
    """Coarse-to-fine pyramid: ``F_P^k = UM(Swin(F_P^{k+1})) + F_A^k``."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        sides = config.level_sides(*config.input_size)
        self.stages = ModuleList()
        self.unmerges = ModuleList()
        # transitions ordered coarse to fine: level 5 -> 4 first
        for depth, source in zip(config.decoder_transition_depths, range(NUM_LEVELS - 1, 0, -1)):
            stage_cfg = SwinStageConfig(
                dim=config.base_dim,
                heads=config.decoder_heads,
                window=config.window,
                depth=depth,
                mlp_ratio=config.mlp_ratio,
                use_rel_bias=config.rel_bias,
                ln_eps=config.ln_eps,
            )
            self.stages.append(SwinStage(stage_cfg, sides[source], rng))
            self.unmerges.append(PatchUnmerge(config.base_dim, rng))

    def __call__(self, attended: Sequence[Tensor]) -> tuple[Tensor, ...]:
        if len(attended) != NUM_LEVELS:
            raise ShapeError(f"decoder needs {NUM_LEVELS} levels, got {len(attended)}")
        current = _to_channels_last(attended[-1])
        decoded = [attended[-1]]
        for step, level in enumerate(range(NUM_LEVELS - 2, -1, -1)):
            up = self.unmerges[step](self.stages[step](current))
            lateral = _to_channels_last(attended[level])
            if up.shape != lateral.shape:
                raise ShapeError(
                    f"decoder level {level + 1}: upsampled {up.shape} does not match attention output {lateral.shape}"
                )
            current = up + lateral
            decoded.append(_to_channels_first(current))
        return tuple(reversed(decoded))


class PredictionHeads(Module):
    """One-channel logits per level restored to input size, fused by a 1×1 convolution."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator) -> None:
        super().__init__()
        self.kind = config.head_kind
        self.scales = config.level_scales
        self.heads = ModuleList()
        for scale in self.scales:
            if self.kind == "deconv":
                self.heads.append(ConvTranspose2d(config.base_dim, 1, scale, rng))
            else:
                self.heads.append(Conv2d(config.base_dim, 1, 1, rng))
        self.fusion = Conv2d(NUM_LEVELS, 1, 1, rng)

    def __call__(self, decoded: Sequence[Tensor]) -> SideOutputs:
        if len(decoded) != NUM_LEVELS:
            raise ShapeError(f"heads need {NUM_LEVELS} levels, got {len(decoded)}")
        sides = []
        for head, scale, features in zip(self.heads, self.scales, decoded):
            logits = head(features)
            if self.kind == "nearest":
                logits = upsample_nearest(logits, scale)
            sides.append(logits)
        fused = self.fusion(ops.concat_channel(sides))
        return SideOutputs(tuple(sides), fused)


# ---------------------------------------------------------------------------
# Full model
# ---------------------------------------------------------------------------
class ChangeDetector(Module):
    def __init__(self, config: ModelConfig, rng: Optional[np.random.Generator] = None) -> None:
        super().__init__()
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.encoder = SiameseEncoder(config, rng)
        self.enhance = DeepFeatureEnhancement(config, rng)
        fusion_cls = ProgressiveAttention if config.decoder_kind == "pcp" else PlainFusion
        self.attention = ModuleList([fusion_cls(2 * config.branch_channels, config, rng) for _ in range(NUM_LEVELS)])
        self.decoder = ProgressiveDecoder(config, rng)
        self.heads = PredictionHeads(config, rng)
        logger.debug("built ChangeDetector with %d parameters", self.num_parameters())

    def check_inputs(self, t1: Tensor, t2: Tensor) -> None:
        if t1.shape != t2.shape:
            raise ShapeError(f"image pair differs in shape: {t1.shape} vs {t2.shape}")
        if t1.ndim != 4 or t1.shape[1] != self.config.in_channels:
            raise ShapeError(f"expected [N, {self.config.in_channels}, H, W] images, got {t1.shape}")
        if tuple(t1.shape[2:]) != tuple(self.config.input_size):
            self.config.check_input_size(*t1.shape[2:])
            raise ContractError(
                f"model was built for {self.config.input_size[0]}x{self.config.input_size[1]} inputs, "
                f"got {t1.shape[2]}x{t1.shape[3]}"
            )

    def trace(self, t1: Tensor, t2: Tensor) -> ForwardTrace:
        self.check_inputs(t1, t2)
        p1, p2 = self.encoder.forward_pair(t1, t2)
        enhanced = self.enhance(p1, p2)
        attended = tuple(
            module(s, d) for module, s, d in zip(self.attention, enhanced.summation, enhanced.difference)
        )
        decoded = self.decoder(attended)
        return ForwardTrace(p1, p2, enhanced, attended, decoded, self.heads(decoded))

    def __call__(self, t1: Tensor, t2: Tensor) -> SideOutputs:
        return self.trace(t1, t2).outputs


def parameter_groups(model: ChangeDetector) -> dict[str, list[tuple[str, Tensor]]]:
    """Split parameters into the backbone and everything initialised for this task."""

    groups: dict[str, list[tuple[str, Tensor]]] = {"encoder": [], "head": []}
    for name, tensor in model.named_parameters():
        groups["encoder" if name.startswith("encoder.") else "head"].append((name, tensor))
    return groups


__all__ = [
    "ChangeDetector",
    "DeepFeatureEnhancement",
    "EnhancedFeatures",
    "EnhancementLevel",
    "FeaturePyramid",
    "ForwardTrace",
    "PlainFusion",
    "PredictionHeads",
    "ProgressiveAttention",
    "ProgressiveDecoder",
    "SideOutputs",
    "SiameseEncoder",
    "parameter_groups",
]
