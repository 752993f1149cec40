"""Parameter and buffer registry shared by every layer."""

from __future__ import annotations

import logging
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from ..autograd.tensor import Tensor, get_default_dtype
from ..errors import CheckpointError

logger = logging.getLogger(__name__)


class Module:
    """Base class for layers; attributes holding parameters or sub-modules register themselves.

    Parameters are leaf tensors that require a gradient. Buffers are mutable
    numpy arrays (BatchNorm running statistics) saved alongside parameters but
    never optimized.
    """

    def __init__(self) -> None:
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name: str, value: object) -> None:
        if isinstance(value, Module):
            self._modules[name] = value
        elif isinstance(value, Tensor) and value.requires_grad:
            value.name = value.name or name
            self._parameters[name] = value
        object.__setattr__(self, name, value)

    # -- registration --------------------------------------------------------
    def parameter(self, name: str, values: np.ndarray) -> Tensor:
        tensor = Tensor(values, requires_grad=True, dtype=get_default_dtype(), name=name)
        setattr(self, name, tensor)
        return tensor

    def register_buffer(self, name: str, values: np.ndarray) -> np.ndarray:
        array = np.array(values, dtype=get_default_dtype())
        self._buffers[name] = array
        object.__setattr__(self, name, array)
        return array

    # -- traversal -----------------------------------------------------------
    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for path, module in self.named_modules(prefix):
            for name, tensor in module._parameters.items():
                yield (f"{path}.{name}" if path else name), tensor

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for path, module in self.named_modules(prefix):
            for name, array in module._buffers.items():
                yield (f"{path}.{name}" if path else name), array

    def parameters(self) -> list[Tensor]:
        return [tensor for _, tensor in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for tensor in self.parameters():
            tensor.zero_grad()

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # -- persistence ---------------------------------------------------------
    def state_dict(self) -> dict[str, dict[str, np.ndarray]]:
        """Copies of every parameter and buffer, keyed by dotted path."""

        return {
            "parameters": {name: t.data.copy() for name, t in self.named_parameters()},
            "buffers": {name: b.copy() for name, b in self.named_buffers()},
        }

    def load_state_dict(
        self,
        parameters: Mapping[str, np.ndarray],
        buffers: Optional[Mapping[str, np.ndarray]] = None,
    ) -> None:
        """Replace values in place; names and shapes must match exactly."""

        _check_names("parameter", [n for n, _ in self.named_parameters()], parameters)
        if buffers is not None:
            _check_names("buffer", [n for n, _ in self.named_buffers()], buffers)
        for name, tensor in self.named_parameters():
            values = np.asarray(parameters[name])
            if values.shape != tensor.shape:
                raise CheckpointError(
                    f"parameter {name!r} has shape {values.shape}, model expects {tensor.shape}"
                )
            tensor.assign_(values)
        if buffers is None:
            return
        for name, array in self.named_buffers():
            values = np.asarray(buffers[name])
            if values.shape != array.shape:
                raise CheckpointError(f"buffer {name!r} has shape {values.shape}, model expects {array.shape}")
            array[...] = values


def _check_names(kind: str, expected: Sequence[str], given: Mapping[str, np.ndarray]) -> None:
    missing = [n for n in expected if n not in given]
    if missing:
        raise CheckpointError(f"missing {kind} {missing[0]!r} ({len(missing)} missing in total)")
    unexpected = sorted(set(given) - set(expected))
    if unexpected:
        raise CheckpointError(f"unexpected {kind} {unexpected[0]!r} ({len(unexpected)} unexpected in total)")


class ModuleList(Module):
    """Ordered children registered as ``0``, ``1``, ..."""

    def __init__(self, modules: Sequence[Module] = ()) -> None:
        super().__init__()
        self._items: list[Module] = []
        for module in modules:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._items)), module)
        self._items.append(module)

    def __getitem__(self, index: int) -> Module:
        return self._items[index]

    def __iter__(self) -> Iterator[Module]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)


__all__ = ["Module", "ModuleList"]
