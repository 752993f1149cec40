"""Binary PPM/PGM rasters through Pillow plus a raw 32-bit sidecar for probability maps."""

from __future__ import annotations

import logging
from pathlib import Path
import struct

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import DataError

logger = logging.getLogger(__name__)

SIDECAR_SUFFIX = ".f32"


def _open(path: Path) -> Image.Image:
    try:
        image = Image.open(path)
        image.load()
    except FileNotFoundError as exc:
        raise DataError(f"raster not found: {path}") from exc
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode raster {path}: {exc}") from exc
    return image


def read_rgb(path: str | Path) -> np.ndarray:
    """[H, W, 3] uint8."""

    return np.asarray(_open(Path(path)).convert("RGB"), dtype=np.uint8)


def write_rgb(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise DataError(f"RGB raster must be [H, W, 3] uint8, got {image.shape} {image.dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    return path


def read_gray(path: str | Path) -> np.ndarray:
    """[H, W] uint8."""

    return np.asarray(_open(Path(path)).convert("L"), dtype=np.uint8)


def write_gray(path: str | Path, image: np.ndarray) -> Path:
    path = Path(path)
    image = np.asarray(image)
    if image.ndim != 2 or image.dtype != np.uint8:
        raise DataError(f"gray raster must be [H, W] uint8, got {image.shape} {image.dtype}")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(image)).save(path, format="PPM")
    return path


def read_mask(path: str | Path) -> np.ndarray:
    """Binary mask; any nonzero gray level counts as change."""

    return (read_gray(path) > 0).astype(np.uint8)


def write_mask(path: str | Path, mask: np.ndarray) -> Path:
    return write_gray(path, (np.asarray(mask) > 0).astype(np.uint8) * 255)


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(SIDECAR_SUFFIX)


def write_probability(path: str | Path, prob: np.ndarray) -> Path:
    """8-bit preview at ``path`` and the exact float32 map next to it.

    Sidecar layout: u32 height, u32 width, then row-major float32, all little-endian.
    """

    prob = np.asarray(prob, dtype=np.float32)
    if prob.ndim != 2:
        raise DataError(f"probability map must be 2-D, got {prob.shape}")
    write_gray(path, np.rint(np.clip(prob, 0.0, 1.0) * 255.0).astype(np.uint8))
    sidecar = sidecar_path(path)
    sidecar.write_bytes(struct.pack("<II", *prob.shape) + prob.astype("<f4").tobytes())
    return sidecar


def read_probability(path: str | Path) -> np.ndarray:
    """Read the float32 sidecar of a probability map (``path`` may name either file)."""

    sidecar = sidecar_path(path)
    try:
        blob = sidecar.read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"probability sidecar not found: {sidecar}") from exc
    if len(blob) < 8:
        raise DataError(f"truncated probability sidecar {sidecar}")
    height, width = struct.unpack_from("<II", blob)
    expected = 8 + 4 * height * width
    if len(blob) != expected:
        raise DataError(f"probability sidecar {sidecar} holds {len(blob)} bytes, expected {expected}")
    return np.frombuffer(blob, dtype="<f4", offset=8).reshape(height, width).astype(np.float32)


__all__ = [
    "read_gray",
    "read_mask",
    "read_probability",
    "read_rgb",
    "sidecar_path",
    "write_gray",
    "write_mask",
    "write_probability",
    "write_rgb",
]
