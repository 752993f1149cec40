"""Binary checkpoint format.

Layout, all little-endian::

    b"TYNC" | u32 version | u32 tensor count
    per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims... | float32 values

Names use reserved prefixes: ``model.`` parameters, ``buffer.`` BatchNorm
running statistics, ``optim.momentum.`` optimizer state and ``meta.`` scalars.
Every ``meta.`` scalar is stored as the four 16-bit chunks of its float64 bit
pattern, so integers, seeds and learning rates survive the 32-bit payload exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
import logging
from pathlib import Path
import struct
from typing import Optional

import numpy as np

from ..errors import CheckpointError
from ..nn.module import Module
from ..settings import LR_DECAY_MODES, TrainConfig
from .optim import SGD

logger = logging.getLogger(__name__)

MAGIC = b"TYNC"
VERSION = 1
PARAM_PREFIX = "model."
BUFFER_PREFIX = "buffer."
MOMENTUM_PREFIX = "optim.momentum."
META_PREFIX = "meta."


def pack_scalar(value: float) -> np.ndarray:
    """Float64 bit pattern as four exactly representable float32 chunks."""

    bits = struct.unpack("<Q", struct.pack("<d", float(value)))[0]
    return np.array([(bits >> shift) & 0xFFFF for shift in (48, 32, 16, 0)], dtype=np.float32)


def unpack_scalar(chunks: np.ndarray) -> float:
    values = np.asarray(chunks).reshape(-1)
    if values.size != 4 or np.any(values != np.rint(values)) or np.any((values < 0) | (values > 0xFFFF)):
        raise CheckpointError(f"malformed packed scalar {values!r}")
    bits = 0
    for chunk in values:
        bits = (bits << 16) | int(chunk)
    return struct.unpack("<d", struct.pack("<Q", bits))[0]


def _encode_train(cfg: TrainConfig) -> dict[str, float]:
    encoded = {}
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if f.name == "lr_decay":
            value = LR_DECAY_MODES.index(value)
        elif value is None:
            value = float("nan")
        encoded[f.name] = float(value)
    return encoded


def _decode_train(values: dict[str, float]) -> TrainConfig:
    kwargs: dict[str, object] = {}
    for f in fields(TrainConfig):
        if f.name not in values:
            raise CheckpointError(f"checkpoint lacks {META_PREFIX}train.{f.name}")
        raw = values[f.name]
        if f.name == "lr_decay":
            kwargs[f.name] = LR_DECAY_MODES[int(raw)]
        elif f.name == "max_steps":
            kwargs[f.name] = None if np.isnan(raw) else int(raw)
        elif f.name == "augment":
            kwargs[f.name] = bool(raw)
        elif isinstance(f.default, int):
            kwargs[f.name] = int(raw)
        else:
            kwargs[f.name] = raw
    return TrainConfig(**kwargs)  # type: ignore[arg-type]


@dataclass(slots=True)
class Checkpoint:
    parameters: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: dict[str, np.ndarray] = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    step: int = 0

    @classmethod
    def capture(cls, model: Module, optimizer: Optional[SGD] = None,
                train: Optional[TrainConfig] = None, step: int = 0) -> "Checkpoint":
        state = model.state_dict()
        return cls(
            parameters=state["parameters"],
            buffers=state["buffers"],
            momentum=optimizer.state_dict() if optimizer is not None else {},
            train=train or TrainConfig(),
            step=step,
        )

    def restore(self, model: Module, optimizer: Optional[SGD] = None) -> None:
        """Load values into ``model`` (and ``optimizer``); names and shapes must match."""

        model.load_state_dict(self.parameters, self.buffers)
        if optimizer is not None:
            optimizer.load_state_dict(self.momentum)

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        items = [(PARAM_PREFIX + n, v) for n, v in self.parameters.items()]
        items += [(BUFFER_PREFIX + n, v) for n, v in self.buffers.items()]
        items += [(MOMENTUM_PREFIX + n, v) for n, v in self.momentum.items()]
        items += [(f"{META_PREFIX}train.{n}", pack_scalar(v)) for n, v in _encode_train(self.train).items()]
        items.append((f"{META_PREFIX}step", pack_scalar(self.step)))
        return items


def encode(checkpoint: Checkpoint) -> bytes:
    tensors = checkpoint.tensors()
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, values in tensors:
        array = np.asarray(values)
        raw_name = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw_name)) + raw_name)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob: bytes, source: str) -> None:
        self.blob, self.offset, self.source = blob, 0, source

    def take(self, count: int, what: str) -> bytes:
        end = self.offset + count
        if end > len(self.blob):
            raise CheckpointError(f"{self.source}: truncated while reading {what} at byte {self.offset}")
        data = self.blob[self.offset:end]
        self.offset = end
        return data

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode(blob: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(blob, source)
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    version = reader.u32("version")
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}, expected {VERSION}")
    count = reader.u32("tensor count")
    parameters: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}
    momentum: dict[str, np.ndarray] = {}
    meta: dict[str, float] = {}
    seen: set[str] = set()
    for index in range(count):
        name = reader.take(reader.u32(f"name length of tensor {index}"), f"name of tensor {index}").decode("utf-8")
        if name in seen:
            raise CheckpointError(f"{source}: duplicate tensor name {name!r}")
        seen.add(name)
        rank = reader.u32(f"rank of {name}")
        shape = tuple(reader.u32(f"dimension of {name}") for _ in range(rank))
        size = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(reader.take(4 * size, f"values of {name}"), dtype="<f4").reshape(shape)
        values = values.astype(np.float32)
        for prefix, target in ((PARAM_PREFIX, parameters), (BUFFER_PREFIX, buffers), (MOMENTUM_PREFIX, momentum)):
            if name.startswith(prefix):
                target[name[len(prefix):]] = values
                break
        else:
            if not name.startswith(META_PREFIX):
                raise CheckpointError(f"{source}: tensor {name!r} has no reserved prefix")
            meta[name[len(META_PREFIX):]] = unpack_scalar(values)
    if reader.offset != len(blob):
        raise CheckpointError(f"{source}: {len(blob) - reader.offset} trailing bytes after {count} tensors")
    if "step" not in meta:
        raise CheckpointError(f"{source}: missing {META_PREFIX}step")
    train = _decode_train({k[len("train."):]: v for k, v in meta.items() if k.startswith("train.")})
    return Checkpoint(parameters, buffers, momentum, train, int(meta["step"]))


def save_checkpoint(path: str | Path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(checkpoint))
    logger.info("checkpoint saved to %s (step %d)", path, checkpoint.step)
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}") from exc
    return decode(blob, str(path))


__all__ = [
    "Checkpoint",
    "MAGIC",
    "VERSION",
    "decode",
    "encode",
    "load_checkpoint",
    "pack_scalar",
    "save_checkpoint",
    "unpack_scalar",
]
