"""Mini-batch SGD with momentum, decoupled weight decay and per-group learning-rate multipliers."""

from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Mapping, Sequence

import numpy as np

from ..autograd.tensor import Tensor
from ..errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)


@dataclass(slots=True)
class ParamGroup:
    name: str
    params: list[tuple[str, Tensor]]
    lr_mult: float = 1.0


class SGD:
    """``v <- mu * v + g`` then ``p <- p - lr * v - lr * wd * p``, with lr scaled per group."""

    def __init__(self, groups: Sequence[ParamGroup], *, momentum: float = 0.9, weight_decay: float = 5e-4) -> None:
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be >= 0, got {weight_decay}")
        self.groups = list(groups)
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: dict[str, np.ndarray] = {}
        for group in self.groups:
            for name, tensor in group.params:
                if name in self.velocity:
                    raise ConfigError(f"parameter {name!r} appears in more than one group")
                self.velocity[name] = np.zeros(tensor.shape, dtype=tensor.dtype)

    def step(self, lr: float) -> None:
        for group in self.groups:
            rate = lr * group.lr_mult
            for name, tensor in group.params:
                if tensor.grad is None:
                    continue
                v = self.velocity[name]
                v *= self.momentum
                v += tensor.grad
                tensor.assign_(tensor.data - rate * v - rate * self.weight_decay * tensor.data)

    def zero_grad(self) -> None:
        for group in self.groups:
            for _, tensor in group.params:
                tensor.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: v.copy() for name, v in self.velocity.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        for name, v in self.velocity.items():
            if name not in state:
                raise CheckpointError(f"missing momentum buffer {name!r}")
            values = np.asarray(state[name])
            if values.shape != v.shape:
                raise CheckpointError(f"momentum buffer {name!r} has shape {values.shape}, expected {v.shape}")
            v[...] = values
        unexpected = sorted(set(state) - set(self.velocity))
        if unexpected:
            raise CheckpointError(f"unexpected momentum buffer {unexpected[0]!r}")


__all__ = ["ParamGroup", "SGD"]
