"""Sample pairs, tiling, augmentation, synthetic scenes and dataset manifests."""

from __future__ import annotations

from dataclasses import dataclass, replace
import logging
from pathlib import Path
import re
from typing import Iterable, Optional, Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from ..errors import DataError
from ..settings import ModelConfig
from . import raster_io

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"
TILE_SUFFIX = re.compile(r"^(?P<base>.*)_r(?P<row>\d+)_c(?P<col>\d+)$")

# fully saturated colours; none of them fits inside the muted background range
PALETTE = np.array(
    [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 0], [255, 0, 255], [0, 255, 255], [255, 255, 255], [0, 0, 0]],
    dtype=np.uint8,
)
BACKGROUND_RANGE = (60, 140)


@dataclass(slots=True)
class SamplePair:
    """Co-registered acquisitions ``t1``/``t2`` ([H, W, 3] uint8) and their change mask ([H, W] 0/1)."""

    t1: np.ndarray
    t2: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self) -> None:
        self.t1 = np.asarray(self.t1, dtype=np.uint8)
        self.t2 = np.asarray(self.t2, dtype=np.uint8)
        self.mask = np.asarray(self.mask)
        if self.t1.ndim != 3 or self.t1.shape[2] != 3:
            raise DataError(f"{self.id}: t1 must be [H, W, 3], got {self.t1.shape}")
        if self.t2.shape != self.t1.shape:
            raise DataError(f"{self.id}: t2 {self.t2.shape} does not match t1 {self.t1.shape}")
        if self.mask.shape != self.t1.shape[:2]:
            raise DataError(f"{self.id}: mask {self.mask.shape} does not match images {self.t1.shape[:2]}")
        if self.mask.size and not np.isin(self.mask, (0, 1)).all():
            raise DataError(f"{self.id}: mask must hold only 0 and 1")
        self.mask = self.mask.astype(np.uint8)

    @property
    def size(self) -> tuple[int, int]:
        return self.mask.shape  # type: ignore[return-value]


def to_batch(pairs: Sequence[SamplePair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack pairs into network inputs: two [N, 3, H, W] arrays in [0, 1] and [N, H, W] masks."""

    if not pairs:
        raise DataError("cannot batch an empty list of pairs")
    t1 = np.stack([p.t1 for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    t2 = np.stack([p.t2 for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    masks = np.stack([p.mask for p in pairs]).astype(np.float64)
    return t1, t2, masks


# ---------------------------------------------------------------------------
# Tiling
# ---------------------------------------------------------------------------
def tile(pair: SamplePair, size: int = 256) -> list[SamplePair]:
    """Non-overlapping ``size``×``size`` tiles in row-major order; partial tiles are dropped."""

    if size < 1:
        raise DataError(f"tile size must be >= 1, got {size}")
    height, width = pair.size
    rows, cols = height // size, width // size
    if rows == 0 or cols == 0:
        logger.warning("%s is %dx%d, smaller than the %d tile size; no tiles produced", pair.id, height, width, size)
        return []
    tiles = []
    for r in range(rows):
        for c in range(cols):
            window = (slice(r * size, (r + 1) * size), slice(c * size, (c + 1) * size))
            tiles.append(SamplePair(pair.t1[window], pair.t2[window], pair.mask[window], f"{pair.id}_r{r}_c{c}"))
    return tiles


def stitch(tiles: Sequence[SamplePair], rows: int, cols: int) -> SamplePair:
    """Reassemble a full row-major tile grid produced by :func:`tile`."""

    if len(tiles) != rows * cols or rows < 1 or cols < 1:
        raise DataError(f"expected {rows}x{cols} = {rows * cols} tiles, got {len(tiles)}")
    match = TILE_SUFFIX.match(tiles[0].id)
    base = match.group("base") if match else tiles[0].id

    def _grid(field: str) -> np.ndarray:
        return np.concatenate(
            [np.concatenate([getattr(tiles[r * cols + c], field) for c in range(cols)], axis=1) for r in range(rows)],
            axis=0,
        )

    return SamplePair(_grid("t1"), _grid("t2"), _grid("mask"), base)


def resize_pair(pair: SamplePair, size: int | tuple[int, int]) -> SamplePair:
    """Bilinear resampling of both images, nearest-neighbour for the mask."""

    height, width = (size, size) if isinstance(size, int) else size
    if height < 1 or width < 1:
        raise DataError(f"resize target must be positive, got {height}x{width}")

    def _resample(array: np.ndarray, method: Image.Resampling) -> np.ndarray:
        return np.asarray(Image.fromarray(np.ascontiguousarray(array)).resize((width, height), method))

    return replace(
        pair,
        t1=_resample(pair.t1, Image.Resampling.BILINEAR),
        t2=_resample(pair.t2, Image.Resampling.BILINEAR),
        mask=_resample(pair.mask * 255, Image.Resampling.NEAREST) // 255,
    )


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------
@dataclass(slots=True, frozen=True)
class AugmentDraw:
    quarter_turns: int = 0
    flip_horizontal: bool = False
    flip_vertical: bool = False

    @classmethod
    def sample(cls, rng: np.random.Generator) -> "AugmentDraw":
        return cls(int(rng.integers(4)), bool(rng.integers(2)), bool(rng.integers(2)))

    def apply(self, array: np.ndarray) -> np.ndarray:
        out = np.rot90(array, self.quarter_turns, axes=(0, 1))
        if self.flip_horizontal:
            out = out[:, ::-1]
        if self.flip_vertical:
            out = out[::-1]
        return np.ascontiguousarray(out)


def augment(pair: SamplePair, rng: np.random.Generator) -> SamplePair:
    """Random quarter-turn rotation and flips, applied identically to both images and the mask."""

    return apply_draw(pair, AugmentDraw.sample(rng))


def apply_draw(pair: SamplePair, draw: AugmentDraw) -> SamplePair:
    return SamplePair(draw.apply(pair.t1), draw.apply(pair.t2), draw.apply(pair.mask), pair.id)


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------
def _background(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.normal(size=(size, size, 3))
    smooth = ndimage.gaussian_filter(noise, sigma=(max(size / 16, 1.0), max(size / 16, 1.0), 0), mode="wrap")
    low, high = smooth.min(), smooth.max()
    scaled = (smooth - low) / (high - low) if high > low else np.zeros_like(smooth)
    lo, hi = BACKGROUND_RANGE
    return np.rint(lo + scaled * (hi - lo)).astype(np.uint8)


def random_shape(rng: np.random.Generator, size: int) -> np.ndarray:
    """Boolean footprint of one axis-aligned rectangle or ellipse inside a size×size canvas."""

    extent_low, extent_high = max(size // 8, 2), max(size // 3, 3)
    height, width = (int(v) for v in rng.integers(extent_low, extent_high + 1, size=2))
    top = int(rng.integers(0, size - height + 1))
    left = int(rng.integers(0, size - width + 1))
    region = np.zeros((size, size), dtype=bool)
    if rng.integers(2) == 0:
        region[top:top + height, left:left + width] = True
        return region
    yy, xx = np.mgrid[0:size, 0:size]
    cy, cx = top + (height - 1) / 2, left + (width - 1) / 2
    region[((yy - cy) / (height / 2)) ** 2 + ((xx - cx) / (width / 2)) ** 2 <= 1.0] = True
    return region


def synth_pair(
    rng: np.random.Generator,
    size: int,
    num_shapes: int,
    pair_id: str,
) -> tuple[SamplePair, list[np.ndarray]]:
    """One scene and the footprints painted into it.

    Each shape either appears in ``t2`` or disappears from ``t1``; the mask is
    the exact set of pixels whose colour differs between the two dates.
    """

    background = _background(rng, size)
    t1, t2 = background.copy(), background.copy()
    regions = []
    for _ in range(num_shapes):
        region = random_shape(rng, size)
        colour = PALETTE[int(rng.integers(len(PALETTE)))]
        target = t2 if rng.integers(2) == 0 else t1
        target[region] = colour
        regions.append(region)
    mask = np.any(t1 != t2, axis=-1).astype(np.uint8)
    return SamplePair(t1, t2, mask, pair_id), regions


def synth_dataset(
    n: int,
    size: int,
    seed: int = 0,
    *,
    shapes: tuple[int, int] = (1, 4),
    model: Optional[ModelConfig] = None,
) -> list[SamplePair]:
    """``n`` deterministic synthetic pairs of side ``size`` named ``synth_0000`` onwards."""

    (model or ModelConfig.toy()).check_input_size(size, size)
    if n < 0:
        raise DataError(f"number of pairs must be >= 0, got {n}")
    low, high = shapes
    if not 0 <= low <= high:
        raise DataError(f"invalid shape count range {shapes}")
    rng = np.random.default_rng(seed)
    pairs = []
    for index in range(n):
        count = int(rng.integers(low, high + 1))
        pair, _ = synth_pair(rng, size, count, f"synth_{index:04d}")
        pairs.append(pair)
    logger.info("synthesised %d pairs of %dx%d (seed %d)", n, size, size, seed)
    return pairs


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------
@dataclass(slots=True, frozen=True)
class ManifestEntry:
    id: str
    t1: Path
    t2: Path
    mask: Path

    def line(self, root: Path) -> str:
        def _rel(p: Path) -> str:
            try:
                return p.relative_to(root).as_posix()
            except ValueError:
                return p.as_posix()

        return "\t".join([self.id, _rel(self.t1), _rel(self.t2), _rel(self.mask)])


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Parse ``id<TAB>t1<TAB>t2<TAB>mask`` lines; relative paths resolve against the manifest's folder."""

    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise DataError(f"manifest not found: {path}") from exc
    entries, seen = [], set()
    for number, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip() or raw.startswith("#"):
            continue
        fields = raw.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{number}: expected 4 tab-separated fields, got {len(fields)}")
        if fields[0] in seen:
            raise DataError(f"{path}:{number}: duplicate id {fields[0]!r}")
        seen.add(fields[0])
        t1, t2, mask = (path.parent / f for f in fields[1:])
        entries.append(ManifestEntry(fields[0], t1, t2, mask))
    return entries


def write_manifest(path: str | Path, entries: Iterable[ManifestEntry]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    root = path.parent
    path.write_text("".join(entry.line(root) + "\n" for entry in entries), encoding="utf-8")
    return path


def load_pair(entry: ManifestEntry) -> SamplePair:
    return SamplePair(
        raster_io.read_rgb(entry.t1),
        raster_io.read_rgb(entry.t2),
        raster_io.read_mask(entry.mask),
        entry.id,
    )


def load_dataset(path: str | Path) -> list[SamplePair]:
    pairs = [load_pair(entry) for entry in read_manifest(path)]
    logger.info("loaded %d pairs from %s", len(pairs), path)
    return pairs


def save_dataset(pairs: Sequence[SamplePair], out_dir: str | Path) -> Path:
    """Write ``t1/``, ``t2/`` and ``mask/`` rasters plus a manifest; returns the manifest path."""

    out_dir = Path(out_dir)
    entries = []
    for pair in pairs:
        entry = ManifestEntry(
            pair.id,
            out_dir / "t1" / f"{pair.id}.ppm",
            out_dir / "t2" / f"{pair.id}.ppm",
            out_dir / "mask" / f"{pair.id}.pgm",
        )
        raster_io.write_rgb(entry.t1, pair.t1)
        raster_io.write_rgb(entry.t2, pair.t2)
        raster_io.write_mask(entry.mask, pair.mask)
        entries.append(entry)
    return write_manifest(out_dir / MANIFEST_NAME, entries)


__all__ = [
    "AugmentDraw",
    "MANIFEST_NAME",
    "ManifestEntry",
    "SamplePair",
    "apply_draw",
    "augment",
    "load_dataset",
    "load_pair",
    "read_manifest",
    "resize_pair",
    "save_dataset",
    "stitch",
    "synth_dataset",
    "synth_pair",
    "tile",
    "to_batch",
    "write_manifest",
]
