"""Parameterized building blocks: linear, convolution and normalization layers."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from .module import Module


def trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float) -> np.ndarray:
    """Normal draws resampled until they fall inside two standard deviations."""

    values = rng.normal(0.0, std, size=shape)
    outside = np.abs(values) > 2 * std
    while np.any(outside):
        values[outside] = rng.normal(0.0, std, size=int(outside.sum()))
        outside = np.abs(values) > 2 * std
    return values


class Linear(Module):
    """``x @ weight + bias`` over the last axis; ``weight`` is [in, out]."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, *, bias: bool = True) -> None:
        super().__init__()
        self.in_features, self.out_features = in_features, out_features
        self.parameter("weight", trunc_normal(rng, (in_features, out_features), 0.02))
        self.bias: Optional[Tensor] = self.parameter("bias", np.zeros(out_features)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        return out + self.bias if self.bias is not None else out


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        *,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ) -> None:
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = in_channels * kernel * kernel
        self.parameter("weight", rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_channels, in_channels, kernel, kernel)))
        self.bias: Optional[Tensor] = self.parameter("bias", np.zeros(out_channels)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    """Learned upsampling by ``stride`` with a ``2 * stride`` kernel unless told otherwise."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        stride: int,
        rng: np.random.Generator,
        *,
        kernel: Optional[int] = None,
        bias: bool = True,
    ) -> None:
        super().__init__()
        self.stride = stride
        kernel = kernel or 2 * stride
        # every output pixel sees (kernel / stride)^2 input positions per channel
        overlap = (kernel / stride) ** 2
        std = np.sqrt(1.0 / (in_channels * overlap))
        self.parameter("weight", rng.normal(0.0, std, size=(in_channels, out_channels, kernel, kernel)))
        self.bias: Optional[Tensor] = self.parameter("bias", np.zeros(out_channels)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d_transpose(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5) -> None:
        super().__init__()
        self.eps = eps
        self.parameter("gamma", np.ones(dim))
        self.parameter("beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


class BatchNorm2d(Module):
    """Batch statistics while training, running statistics in eval mode."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1) -> None:
        super().__init__()
        self.eps, self.momentum = eps, momentum
        self.parameter("gamma", np.ones(channels))
        self.parameter("beta", np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ConvBNReLU(Module):
    """Bias-free convolution followed by batch normalization and a rectifier."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator, *,
                 eps: float = 1e-5, momentum: float = 0.1) -> None:
        super().__init__()
        self.conv = Conv2d(in_channels, out_channels, 1, rng, bias=False)
        self.bn = BatchNorm2d(out_channels, eps=eps, momentum=momentum)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.relu(self.bn(self.conv(x)))


def upsample_nearest(x: Tensor, factor: int) -> Tensor:
    """Repeat every pixel of an NCHW map into a ``factor``×``factor`` block."""

    n, c, h, w = x.shape
    block = Tensor(np.ones((1, 1, 1, factor, 1, factor)), dtype=x.dtype)
    tiled = ops.mul(ops.reshape(x, (n, c, h, 1, w, 1)), block)
    return ops.reshape(tiled, (n, c, h * factor, w * factor))


__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "ConvBNReLU",
    "ConvTranspose2d",
    "LayerNorm",
    "Linear",
    "trunc_normal",
    "upsample_nearest",
]
