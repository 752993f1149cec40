"""Shifted-window transformer blocks.

Feature maps travel through this module channel-last, as ``[N, h, w, C]``.
Attention runs inside non-overlapping M×M windows; every second block of a
stage rolls the map by ``M // 2`` first and masks token pairs that were not
neighbours before the roll.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import Optional

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from ..errors import ConfigError, ShapeError
from .layers import Conv2d, LayerNorm, Linear, trunc_normal
from .module import Module, ModuleList

logger = logging.getLogger(__name__)

MASK_VALUE = -1e9


@dataclass(slots=True, frozen=True)
class SwinStageConfig:
    dim: int
    heads: int
    window: int
    depth: int
    mlp_ratio: float = 4.0
    use_rel_bias: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self) -> None:
        if self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.depth < 2 or self.depth % 2:
            raise ConfigError(f"depth {self.depth} must be a positive even number of W/SW blocks")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")


# ---------------------------------------------------------------------------
# Window layout
# ---------------------------------------------------------------------------
@dataclass(slots=True)
class WindowLayout:
    """Window grid of an h×w map; ``mask`` is set only for shifted layouts."""

    height: int
    width: int
    window: int
    shift: int = 0
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        if self.height % self.window or self.width % self.window:
            raise ShapeError(f"{self.height}x{self.width} map does not tile into {self.window}x{self.window} windows")
        if not 0 <= self.shift < self.window:
            raise ShapeError(f"shift {self.shift} must lie in [0, {self.window})")
        if self.shift:
            self.mask = self._build_mask()

    @property
    def num_windows(self) -> int:
        return (self.height // self.window) * (self.width // self.window)

    @property
    def tokens(self) -> int:
        return self.window * self.window

    def group_ids(self) -> np.ndarray:
        """Connectivity group of every position of the rolled map.

        Rows (columns) at or beyond ``h - shift`` wrapped around from the
        opposite edge; the group id is the pair of wrap flags.
        """

        rows = (np.arange(self.height) >= self.height - self.shift).astype(np.int64)
        cols = (np.arange(self.width) >= self.width - self.shift).astype(np.int64)
        return rows[:, None] * 2 + cols[None, :]

    def _build_mask(self) -> np.ndarray:
        m = self.window
        ids = self.group_ids().reshape(self.height // m, m, self.width // m, m)
        ids = ids.transpose(0, 2, 1, 3).reshape(self.num_windows, m * m)
        same = ids[:, :, None] == ids[:, None, :]
        return np.where(same, 0.0, MASK_VALUE)


def window_partition(x: Tensor, window: int) -> Tensor:
    """[N, h, w, C] -> [N * nW, M * M, C], windows in row-major order."""

    n, h, w, c = x.shape
    if h % window or w % window:
        raise ShapeError(f"window_partition: {h}x{w} map does not tile into {window}x{window} windows")
    grid = ops.reshape(x, (n, h // window, window, w // window, window, c))
    grid = ops.permute(grid, (0, 1, 3, 2, 4, 5))
    return ops.reshape(grid, (n * (h // window) * (w // window), window * window, c))


def window_reverse(windows: Tensor, window: int, height: int, width: int) -> Tensor:
    """Inverse of :func:`window_partition`."""

    nh, nw = height // window, width // window
    c = windows.shape[-1]
    if windows.shape[0] % (nh * nw):
        raise ShapeError(f"window_reverse: {windows.shape[0]} windows do not form {nh}x{nw} grids")
    n = windows.shape[0] // (nh * nw)
    grid = ops.reshape(windows, (n, nh, nw, window, window, c))
    grid = ops.permute(grid, (0, 1, 3, 2, 4, 5))
    return ops.reshape(grid, (n, height, width, c))


def relative_position_index(window: int) -> np.ndarray:
    """[M², M²] indices into a (2M-1)² bias table, one per coordinate offset."""

    coords = np.stack(np.meshgrid(np.arange(window), np.arange(window), indexing="ij")).reshape(2, -1)
    offsets = coords[:, :, None] - coords[:, None, :] + (window - 1)
    return offsets[0] * (2 * window - 1) + offsets[1]


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------
class PatchEmbed(Module):
    """Stride-4 patch projection: [N, Cin, H, W] -> tokens [N, H/4 * W/4, dim]."""

    def __init__(self, in_channels: int, dim: int, rng: np.random.Generator, *, patch: int = 4, eps: float = 1e-5) -> None:
        super().__init__()
        self.patch = patch
        self.proj = Conv2d(in_channels, dim, patch, rng, stride=patch)
        self.norm = LayerNorm(dim, eps)

    def __call__(self, image: Tensor) -> Tensor:
        n, _, h, w = image.shape
        if h % self.patch or w % self.patch:
            raise ShapeError(f"patch_embed: {h}x{w} image is not divisible into {self.patch}x{self.patch} patches")
        maps = self.proj(image)
        dim = maps.shape[1]
        tokens = ops.reshape(ops.permute(maps, (0, 2, 3, 1)), (n, (h // self.patch) * (w // self.patch), dim))
        return self.norm(tokens)


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator, *, use_rel_bias: bool = True) -> None:
        super().__init__()
        if dim % heads:
            raise ConfigError(f"dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.scale = (dim // heads) ** -0.5
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.use_rel_bias = use_rel_bias
        if use_rel_bias:
            self.parameter("bias_table", trunc_normal(rng, ((2 * window - 1) ** 2, heads), 0.02))
            self.bias_index = relative_position_index(window)

    def attention(self, x: Tensor, mask: Optional[np.ndarray] = None) -> tuple[Tensor, Tensor]:
        """Return the attention probabilities [B, heads, T, T] and values [B, heads, T, hd]."""

        b, t, c = x.shape
        if c != self.dim:
            raise ShapeError(f"window attention expects {self.dim} channels, got {c}")
        hd = c // self.heads
        qkv = ops.reshape(self.qkv(x), (b, t, 3, self.heads, hd))

        def _part(i: int) -> Tensor:
            piece = ops.reshape(ops.slice_axis(qkv, i, i + 1, axis=2), (b, t, self.heads, hd))
            return ops.permute(piece, (0, 2, 1, 3))

        q, k, v = _part(0), _part(1), _part(2)
        logits = ops.matmul(q * self.scale, ops.permute(k, (0, 1, 3, 2)))
        if self.use_rel_bias:
            if t != self.window * self.window:
                raise ShapeError(f"relative bias expects {self.window ** 2} tokens per window, got {t}")
            bias = ops.gather(self.bias_table, self.bias_index)
            logits = logits + ops.permute(bias, (2, 0, 1))
        if mask is not None:
            nw = mask.shape[0]
            if mask.shape != (nw, t, t) or b % nw:
                raise ShapeError(f"mask of shape {mask.shape} does not fit {b} windows of {t} tokens")
            grouped = ops.reshape(logits, (b // nw, nw, self.heads, t, t))
            masked = grouped + Tensor(mask[None, :, None], dtype=logits.dtype)
            logits = ops.reshape(masked, (b, self.heads, t, t))
        return ops.softmax(logits, axis=-1), v

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        b, t, c = x.shape
        attn, v = self.attention(x, mask)
        out = ops.permute(ops.matmul(attn, v), (0, 2, 1, 3))
        return self.proj(ops.reshape(out, (b, t, c)))


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class SwinBlock(Module):
    """LN → (shifted) window attention → residual, then LN → MLP → residual."""

    def __init__(self, cfg: SwinStageConfig, resolution: tuple[int, int], shift: int, rng: np.random.Generator) -> None:
        super().__init__()
        h, w = resolution
        self.layout = WindowLayout(h, w, cfg.window, shift)
        self.norm1 = LayerNorm(cfg.dim, cfg.ln_eps)
        self.attn = WindowAttention(cfg.dim, cfg.heads, cfg.window, rng, use_rel_bias=cfg.use_rel_bias)
        self.norm2 = LayerNorm(cfg.dim, cfg.ln_eps)
        self.mlp = Mlp(cfg.dim, int(cfg.dim * cfg.mlp_ratio), rng)

    def __call__(self, x: Tensor) -> Tensor:
        layout = self.layout
        n, h, w, c = x.shape
        if (h, w) != (layout.height, layout.width):
            raise ShapeError(f"block built for {layout.height}x{layout.width} maps received {h}x{w}")
        s, m = layout.shift, layout.window
        y = self.norm1(x)
        if s:
            y = ops.roll2d(y, (-s, -s), axes=(1, 2))
        y = window_reverse(self.attn(window_partition(y, m), layout.mask), m, h, w)
        if s:
            y = ops.roll2d(y, (s, s), axes=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class SwinBlockPair(Module):
    """A regular-window block followed by a shifted-window block."""

    def __init__(self, cfg: SwinStageConfig, resolution: tuple[int, int], rng: np.random.Generator) -> None:
        super().__init__()
        h, w = resolution
        shift = 0 if min(h, w) <= cfg.window else cfg.window // 2
        self.regular = SwinBlock(cfg, resolution, 0, rng)
        self.shifted = SwinBlock(cfg, resolution, shift, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.shifted(self.regular(x))


class SwinStage(Module):
    """``depth // 2`` block pairs at a fixed resolution.

    The window is clamped to the map when the map is no larger than one
    window, in which case the shifted blocks do not shift.
    """

    def __init__(self, cfg: SwinStageConfig, resolution: tuple[int, int], rng: np.random.Generator) -> None:
        super().__init__()
        h, w = resolution
        window = min(cfg.window, h, w)
        if window != cfg.window:
            logger.debug("clamping window %d to %d on a %dx%d map", cfg.window, window, h, w)
            cfg = SwinStageConfig(cfg.dim, cfg.heads, window, cfg.depth, cfg.mlp_ratio, cfg.use_rel_bias, cfg.ln_eps)
        self.cfg = cfg
        self.resolution = resolution
        self.pairs = ModuleList([SwinBlockPair(cfg, resolution, rng) for _ in range(cfg.depth // 2)])

    def __call__(self, x: Tensor) -> Tensor:
        for pair in self.pairs:
            x = pair(x)
        return x


class PatchMerge(Module):
    """[N, h, w, C] -> [N, h/2, w/2, 2C]: gather 2×2 neighbours, LN, project without bias."""

    def __init__(self, dim: int, rng: np.random.Generator, *, eps: float = 1e-5) -> None:
        super().__init__()
        self.norm = LayerNorm(4 * dim, eps)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"patch_merge needs even extents, got {h}x{w}")
        grid = ops.reshape(x, (n, h // 2, 2, w // 2, 2, c))
        # channel blocks ordered (0,0), (1,0), (0,1), (1,1) as (row, col) offsets
        grid = ops.permute(grid, (0, 1, 3, 4, 2, 5))
        merged = ops.reshape(grid, (n, h // 2, w // 2, 4 * c))
        return self.reduction(self.norm(merged))


class PatchUnmerge(Module):
    """[N, h, w, C] -> [N, 2h, 2w, C]: project to 4C, then unfold into 2×2 blocks."""

    def __init__(self, dim: int, rng: np.random.Generator) -> None:
        super().__init__()
        self.expand = Linear(dim, 4 * dim, rng, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        n, h, w, c = x.shape
        wide = ops.reshape(self.expand(x), (n, h, w, 2, 2, c))
        wide = ops.permute(wide, (0, 1, 3, 2, 4, 5))
        return ops.reshape(wide, (n, 2 * h, 2 * w, c))


__all__ = [
    "MASK_VALUE",
    "Mlp",
    "PatchEmbed",
    "PatchMerge",
    "PatchUnmerge",
    "SwinBlock",
    "SwinBlockPair",
    "SwinStage",
    "SwinStageConfig",
    "WindowAttention",
    "WindowLayout",
    "relative_position_index",
    "window_partition",
    "window_reverse",
]
