"""Dense tensors recorded on a reverse-mode gradient tape.

A :class:`Tensor` wraps a read-only numpy array. Primitives in :mod:`.ops`
produce new tensors and, when any input requires a gradient, attach a
:class:`Node` describing how to push adjoints back to their inputs.
:func:`backward` orders the reachable nodes topologically into a
:class:`Graph` and visits each exactly once.

Leaf gradients accumulate: calling :func:`backward` twice without
:meth:`Tensor.zero_grad` adds the second set of adjoints to the first.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
import logging
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_STATE: dict[str, object] = {"dtype": np.dtype(np.float64), "grad_enabled": True, "check_finite": True}


def get_default_dtype() -> np.dtype:
    return _STATE["dtype"]  # type: ignore[return-value]


def set_default_dtype(dtype: object) -> None:
    resolved = np.dtype(dtype)
    if resolved not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"Only float32 and float64 are supported, got {resolved}")
    _STATE["dtype"] = resolved


@contextlib.contextmanager
def default_dtype(dtype: object) -> Iterator[None]:
    previous = get_default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        _STATE["dtype"] = previous


def is_grad_enabled() -> bool:
    return bool(_STATE["grad_enabled"])


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording nodes."""

    previous = _STATE["grad_enabled"]
    _STATE["grad_enabled"] = False
    try:
        yield
    finally:
        _STATE["grad_enabled"] = previous


@dataclass(slots=True)
class Node:
    """One executed primitive: its inputs and the adjoint rule."""

    op: str
    inputs: tuple["Tensor", ...]
    backward: BackwardFn


class Tensor:
    """Immutable n-dimensional array with an optional gradient accumulator."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")

    def __init__(
        self,
        data: object,
        *,
        requires_grad: bool = False,
        dtype: object = None,
        name: Optional[str] = None,
    ) -> None:
        array = np.array(data, dtype=dtype if dtype is not None else get_default_dtype())
        array.flags.writeable = False
        self.data: np.ndarray = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, op: str, inputs: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Wrap a primitive's output, recording a node when gradients flow."""

        if _STATE["check_finite"] and not np.all(np.isfinite(data)):
            raise NumericError(f"{op} produced non-finite values for input shapes "
                               f"{[tuple(t.shape) for t in inputs]}")
        out = cls.__new__(cls)
        array = np.ascontiguousarray(data)
        array.flags.writeable = False
        out.data = array
        out.grad = None
        out.name = None
        out.requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
        out.node = Node(op, tuple(inputs), backward) if out.requires_grad else None
        return out

    # -- array facade --------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def assign_(self, values: np.ndarray) -> None:
        """Replace the stored values between steps (optimizer and checkpoint use)."""

        values = np.asarray(values, dtype=self.dtype)
        if values.shape != self.shape:
            raise ShapeError(f"cannot assign shape {values.shape} to tensor of shape {self.shape}")
        array = values.copy()
        array.flags.writeable = False
        self.data = array

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    # -- operators (delegated to ops to keep one definition per primitive) ---
    def __add__(self, other: object) -> "Tensor":
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other: object) -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other: object) -> "Tensor":
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other: object) -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: object) -> "Tensor":
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other: object) -> "Tensor":
        from . import ops
        return ops.div(other, self)

    def __neg__(self) -> "Tensor":
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)


def as_tensor(value: object, like: Optional[Tensor] = None) -> Tensor:
    """Return ``value`` as a constant tensor (tensors pass through untouched)."""

    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


@dataclass(slots=True)
class Graph:
    """Tensors reachable from an output, inputs before the nodes that read them."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(output, False)]
        while stack:
            tensor, expanded = stack.pop()
            if expanded:
                order.append(tensor)
                continue
            if id(tensor) in seen:
                continue
            seen.add(id(tensor))
            stack.append((tensor, True))
            if tensor.node is not None:
                for parent in reversed(tensor.node.inputs):
                    if id(parent) not in seen:
                        stack.append((parent, False))
        return cls(order)

    def leaves(self) -> list[Tensor]:
        """Gradient-requiring tensors that no primitive produced (parameters, inputs)."""

        return [t for t in self.nodes if t.node is None and t.requires_grad]

    def __len__(self) -> int:
        return len(self.nodes)


def backward(loss: Tensor, graph: Optional[Graph] = None) -> Graph:
    """Accumulate d(loss)/d(leaf) into every gradient-requiring leaf's ``grad``."""

    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ShapeError("loss does not depend on any tensor that requires a gradient")
    graph = graph or Graph.trace(loss)
    adjoints: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    for tensor in reversed(graph.nodes):
        adjoint = adjoints.pop(id(tensor), None)
        if adjoint is None:
            continue
        if tensor.node is None:
            if tensor.requires_grad:
                tensor.grad = adjoint.copy() if tensor.grad is None else tensor.grad + adjoint
            continue
        for parent, contribution in zip(tensor.node.inputs, tensor.node.backward(adjoint)):
            if contribution is None or not parent.requires_grad:
                continue
            previous = adjoints.get(id(parent))
            adjoints[id(parent)] = contribution if previous is None else previous + contribution
    return graph


__all__ = [
    "Graph",
    "Node",
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "is_grad_enabled",
    "no_grad",
    "set_default_dtype",
]
