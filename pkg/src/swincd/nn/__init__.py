"""Layers, Swin blocks and the change-detection network."""

from .layers import BatchNorm2d, Conv2d, ConvBNReLU, ConvTranspose2d, LayerNorm, Linear
from .module import Module, ModuleList
from .network import (
    ChangeDetector,
    EnhancedFeatures,
    FeaturePyramid,
    ForwardTrace,
    SideOutputs,
    parameter_groups,
)
from .swin import (
    PatchEmbed,
    PatchMerge,
    PatchUnmerge,
    SwinBlock,
    SwinBlockPair,
    SwinStage,
    SwinStageConfig,
    WindowAttention,
    WindowLayout,
    window_partition,
    window_reverse,
)

__all__ = [
    "BatchNorm2d",
    "ChangeDetector",
    "Conv2d",
    "ConvBNReLU",
    "ConvTranspose2d",
    "EnhancedFeatures",
    "FeaturePyramid",
    "ForwardTrace",
    "LayerNorm",
    "Linear",
    "Module",
    "ModuleList",
    "PatchEmbed",
    "PatchMerge",
    "PatchUnmerge",
    "SideOutputs",
    "SwinBlock",
    "SwinBlockPair",
    "SwinStage",
    "SwinStageConfig",
    "WindowAttention",
    "WindowLayout",
    "parameter_groups",
    "window_partition",
    "window_reverse",
]
