"""Differentiable primitives.

Every primitive computes its forward value with numpy and registers an adjoint
rule on the tape. Reductions run in a fixed order so that repeated evaluations
on one platform are bit-identical.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from scipy import special

from ..errors import NumericError, ShapeError
from .tensor import Tensor, as_tensor

ELEMENTWISE_KINDS = ("add", "sub", "mul", "div", "relu", "sigmoid", "neg", "log", "gelu")
REDUCE_KINDS = ("sum_channel", "global_avg_pool", "mean_all")
LAYOUT_KINDS = ("reshape", "permute", "concat_channel", "roll2d")


def _pair(a: object, b: object) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _broadcast(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from exc


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` along the axes broadcasting expanded."""

    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# Elementwise
# ---------------------------------------------------------------------------
def add(a: object, b: object) -> Tensor:
    a, b = _pair(a, b)
    _broadcast("add", a, b)
    return Tensor.from_op(
        a.data + b.data, "add", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: object, b: object) -> Tensor:
    a, b = _pair(a, b)
    _broadcast("sub", a, b)
    return Tensor.from_op(
        a.data - b.data, "sub", (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: object, b: object) -> Tensor:
    a, b = _pair(a, b)
    _broadcast("mul", a, b)
    return Tensor.from_op(
        a.data * b.data, "mul", (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: object, b: object) -> Tensor:
    a, b = _pair(a, b)
    _broadcast("div", a, b)
    out = a.data / b.data
    return Tensor.from_op(
        out, "div", (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(x: Tensor) -> Tensor:
    return Tensor.from_op(-x.data, "neg", (x,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    """Rectifier; the subgradient at exactly 0 is 0."""

    active = x.data > 0
    return Tensor.from_op(np.where(active, x.data, 0), "relu", (x,), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    out = special.expit(x.data)
    return Tensor.from_op(out, "sigmoid", (x,), lambda g: (g * out * (1 - out),))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log requires strictly positive input")
    return Tensor.from_op(np.log(x.data), "log", (x,), lambda g: (g / x.data,))


def clamp(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return Tensor.from_op(np.clip(x.data, low, high), "clamp", (x,), lambda g: (g * inside,))


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) Gaussian error linear unit."""

    cdf = 0.5 * (1.0 + special.erf(x.data / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x.data * x.data) / np.sqrt(2.0 * np.pi)
    return Tensor.from_op(x.data * cdf, "gelu", (x,), lambda g: (g * (cdf + x.data * pdf),))


def elementwise(kind: str, a: Tensor, b: Optional[object] = None) -> Tensor:
    """Dispatch to an elementwise primitive by name."""

    binary = {"add": add, "sub": sub, "mul": mul, "div": div}
    unary = {"relu": relu, "sigmoid": sigmoid, "neg": neg, "log": log, "gelu": gelu}
    if kind in binary:
        if b is None:
            raise ShapeError(f"{kind} needs two operands")
        return binary[kind](a, b)
    if kind in unary:
        return unary[kind](a)
    raise ValueError(f"unknown elementwise kind {kind!r}; expected one of {ELEMENTWISE_KINDS}")


# ---------------------------------------------------------------------------
# Linear algebra and normalization
# ---------------------------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, broadcasting leading axes."""

    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch dimensions differ: {a.shape} @ {b.shape}") from exc

    def _backward(g: np.ndarray):
        return (
            _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape),
            _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape),
        )

    return Tensor.from_op(a.data @ b.data, "matmul", (a, b), _backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax axis {axis} out of range for shape {x.shape}")
    shifted = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    out = shifted / shifted.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out, "softmax", (x,), _backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine ``gamma``/``beta``."""

    dim = x.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise ShapeError(f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {dim}")
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std
    lead = tuple(range(x.ndim - 1))

    def _backward(g: np.ndarray):
        gxhat = g * gamma.data
        gx = inv_std * (
            gxhat
            - gxhat.mean(axis=-1, keepdims=True)
            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return Tensor.from_op(xhat * gamma.data + beta.data, "layer_norm", (x, gamma, beta), _backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray] = None,
    running_var: Optional[np.ndarray] = None,
    *,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization of an NCHW tensor.

    Training uses batch statistics and, when buffers are given, updates them in
    place with ``momentum`` (the running variance uses the unbiased estimate).
    Evaluation normalizes with the running statistics.
    """

    if x.ndim != 4:
        raise ShapeError(f"batch_norm expects [N, C, H, W], got {x.shape}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batch_norm affine shapes {gamma.shape}/{beta.shape} do not match {channels} channels")
    axes = (0, 2, 3)
    view = (1, channels, 1, 1)

    if training:
        count = x.shape[0] * x.shape[2] * x.shape[3]
        if count == 1:
            raise ShapeError("batch_norm in train mode needs more than one value per channel (N*H*W == 1)")
        mean = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mean
        var = (centered * centered).mean(axis=axes, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv_std
        if running_mean is not None and running_var is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mean.reshape(channels)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(channels) * count / (count - 1)

        def _backward(g: np.ndarray):
            gxhat = g * gamma.data.reshape(view)
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True)
            )
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    else:
        if running_mean is None or running_var is None:
            raise ShapeError("batch_norm in eval mode needs running statistics")
        inv_std = (1.0 / np.sqrt(running_var + eps)).reshape(view).astype(x.dtype)
        xhat = (x.data - running_mean.reshape(view).astype(x.dtype)) * inv_std

        def _backward(g: np.ndarray):
            return g * gamma.data.reshape(view) * inv_std, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gamma.data.reshape(view) + beta.data.reshape(view)
    return Tensor.from_op(out, "batch_norm", (x, gamma, beta), _backward)


# ---------------------------------------------------------------------------
# Convolutions
# ---------------------------------------------------------------------------
def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather sliding windows: [N, C, Hp, Wp] -> [N, C*kh*kw, ho*wo]."""

    n, c = xp.shape[:2]
    s = stride
    if kh % s == 0 and kw % s == 0:
        # kernel offsets split into (block, phase); each block is one strided view
        xr = xp.reshape(n, c, xp.shape[2] // s, s, xp.shape[3] // s, s)
        cols = np.empty((n, c, kh // s, s, kw // s, s, ho, wo), dtype=xp.dtype)
        for a in range(kh // s):
            for b in range(kw // s):
                cols[:, :, a, :, b, :] = xr[:, :, a:a + ho, :, b:b + wo, :].transpose(0, 1, 3, 5, 2, 4)
    else:
        cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
        for u in range(kh):
            for v in range(kw):
                cols[:, :, u, v] = xp[:, :, u:u + s * ho:s, v:v + s * wo:s]
    return cols.reshape(n, c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, channels: int, hp: int, wp: int, kh: int, kw: int, stride: int,
            ho: int, wo: int) -> np.ndarray:
    """Scatter-add windows back: exact adjoint of :func:`_im2col`."""

    n = cols.shape[0]
    s = stride
    if kh % s == 0 and kw % s == 0:
        blocks = cols.reshape(n, channels, kh // s, s, kw // s, s, ho, wo)
        xr = np.zeros((n, channels, hp // s, s, wp // s, s), dtype=cols.dtype)
        for a in range(kh // s):
            for b in range(kw // s):
                xr[:, :, a:a + ho, :, b:b + wo, :] += blocks[:, :, a, :, b, :].transpose(0, 1, 4, 2, 5, 3)
        return xr.reshape(n, channels, hp, wp)
    blocks = cols.reshape(n, channels, kh, kw, ho, wo)
    xp = np.zeros((n, channels, hp, wp), dtype=cols.dtype)
    for u in range(kh):
        for v in range(kw):
            xp[:, :, u:u + s * ho:s, v:v + s * wo:s] += blocks[:, :, u, v]
    return xp


def _pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def _crop2d(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return x[:, :, pad:-pad, pad:-pad]


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` [N, Cin, H, W] with ``w`` [Cout, Cin, kh, kw]."""

    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    cout, wcin, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d weight expects {wcin} input channels, input has {cin}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d stride must be >= 1 and padding >= 0, got {stride}/{padding}")
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw or (hp - kh) % stride or (wp - kw) % stride:
        raise ShapeError(
            f"conv2d output extent is not integral: ({h}+2*{padding}-{kh})/{stride}, ({wd}+2*{padding}-{kw})/{stride}"
        )
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match {cout} output channels")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1
    xp = _pad2d(x.data, padding)
    # blocked gathering needs the padded extent to be a whole number of strides
    hp_used, wp_used = (ho - 1) * stride + kh, (wo - 1) * stride + kw
    xp = xp[:, :, :hp_used, :wp_used]
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = w.data.reshape(cout, cin * kh * kw)
    out = (wmat @ cols).reshape(n, cout, ho, wo)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def _backward(g: np.ndarray):
        g2 = g.reshape(n, cout, ho * wo)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        gxp[:, :, :hp_used, :wp_used] = _col2im(wmat.T @ g2, cin, hp_used, wp_used, kh, kw, stride, ho, wo)
        gx = _crop2d(gxp, padding)
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    inputs = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(out, "conv2d", inputs, _backward)


def conv2d_transpose(
    x: Tensor,
    w: Tensor,
    b: Optional[Tensor] = None,
    stride: int = 1,
    padding: Optional[int] = None,
) -> Tensor:
    """Transpose of :func:`conv2d`; ``w`` is [Cin, Cout, kh, kw].

    With the default padding ``(k - stride) / 2`` the output extent is exactly
    ``input * stride``.
    """

    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d_transpose expects rank-4 input and weight, got {x.shape} and {w.shape}")
    n, cin, h, wd = x.shape
    wcin, cout, kh, kw = w.shape
    if wcin != cin:
        raise ShapeError(f"conv2d_transpose weight expects {wcin} input channels, input has {cin}")
    if stride < 1:
        raise ShapeError(f"conv2d_transpose stride must be >= 1, got {stride}")
    if padding is None:
        if (kh - stride) % 2 or (kw - stride) % 2 or kh < stride or kw < stride:
            raise ShapeError(f"kernel {kh}x{kw} with stride {stride} has no symmetric size-preserving padding")
        padding = (kh - stride) // 2
    hp, wp = (h - 1) * stride + kh, (wd - 1) * stride + kw
    if hp <= 2 * padding or wp <= 2 * padding:
        raise ShapeError(f"conv2d_transpose padding {padding} consumes the whole {hp}x{wp} output")
    if b is not None and b.shape != (cout,):
        raise ShapeError(f"conv2d_transpose bias shape {b.shape} does not match {cout} output channels")
    wmat = w.data.reshape(cin, cout * kh * kw)
    x2 = x.data.reshape(n, cin, h * wd)
    out = _crop2d(_col2im(wmat.T @ x2, cout, hp, wp, kh, kw, stride, h, wd), padding)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def _backward(g: np.ndarray):
        gcols = _im2col(_pad2d(g, padding), kh, kw, stride, h, wd)
        gx = (wmat @ gcols).reshape(x.shape)
        gw = np.tensordot(x2, gcols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    inputs = (x, w, b) if b is not None else (x, w)
    return Tensor.from_op(np.ascontiguousarray(out), "conv2d_transpose", inputs, _backward)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------
def _axis_validity(length: int, radius: int) -> dict[int, np.ndarray]:
    positions = np.arange(length)
    return {d: (positions + d >= 0) & (positions + d < length) for d in range(-radius, radius + 1)}


def avg_pool_contrast(x: Tensor, m: int) -> Tensor:
    """Return ``x - Pool^m(x)`` with stride 1 and same-size output.

    The pool averages only the in-bounds elements of each m×m window. The
    contrast is accumulated as a sum of differences, so a constant field gives
    exactly zero, borders included.
    """

    if m < 1 or m % 2 == 0:
        raise ShapeError(f"pool size must be odd and >= 1, got {m}")
    if x.ndim < 2:
        raise ShapeError(f"avg_pool_contrast needs a spatial input, got {x.shape}")
    r = m // 2
    h, w = x.shape[-2:]
    valid_y, valid_x = _axis_validity(h, r), _axis_validity(w, r)
    count = np.outer(np.sum(list(valid_y.values()), axis=0),
                     np.sum(list(valid_x.values()), axis=0)).astype(x.dtype)
    lead = [(0, 0)] * (x.ndim - 2)
    xp = np.pad(x.data, lead + [(r, r), (r, r)])
    acc = np.zeros_like(x.data)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            mask = np.outer(valid_y[dy], valid_x[dx])
            shifted = xp[..., r + dy:r + dy + h, r + dx:r + dx + w]
            acc += (x.data - shifted) * mask

    def _backward(g: np.ndarray):
        scaled = g / count
        gp = np.zeros(xp.shape, dtype=g.dtype)
        for dy in range(-r, r + 1):
            for dx in range(-r, r + 1):
                mask = np.outer(valid_y[dy], valid_x[dx])
                gp[..., r + dy:r + dy + h, r + dx:r + dx + w] += scaled * mask
        return (g - gp[..., r:r + h, r:r + w],)

    return Tensor.from_op(acc / count, f"avg_pool_contrast{m}", (x,), _backward)


def box_mean(x: Tensor, size: int) -> Tensor:
    """Mean over every size×size window fully inside the map (stride 1, no padding)."""

    h, w = x.shape[-2:]
    if size < 1 or h < size or w < size:
        raise ShapeError(f"box_mean window {size} does not fit a {h}x{w} map")
    ho, wo = h - size + 1, w - size + 1
    acc = np.zeros(x.shape[:-2] + (ho, wo), dtype=x.dtype)
    for a in range(size):
        for b in range(size):
            acc += x.data[..., a:a + ho, b:b + wo]
    area = float(size * size)

    def _backward(g: np.ndarray):
        gx = np.zeros(x.shape, dtype=g.dtype)
        scaled = g / area
        for a in range(size):
            for b in range(size):
                gx[..., a:a + ho, b:b + wo] += scaled
        return (gx,)

    return Tensor.from_op(acc / area, "box_mean", (x,), _backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------
def _norm_axes(axis: Optional[int | Sequence[int]], ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    return tuple(sorted(a % ndim for a in axes))


def sum(x: Tensor, axis: Optional[int | Sequence[int]] = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    return Tensor.from_op(
        x.data.sum(axis=axes, keepdims=keepdims), "sum", (x,),
        lambda g: (np.broadcast_to(g.reshape(kept), x.shape).copy(),),
    )


def mean(x: Tensor, axis: Optional[int | Sequence[int]] = None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    kept = tuple(1 if i in axes else n for i, n in enumerate(x.shape))
    return Tensor.from_op(
        x.data.sum(axis=axes, keepdims=keepdims) / count, "mean", (x,),
        lambda g: (np.broadcast_to(g.reshape(kept) / count, x.shape).copy(),),
    )


def sum_channel(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, 1, H, W]."""

    if x.ndim != 4:
        raise ShapeError(f"sum_channel expects [N, C, H, W], got {x.shape}")
    return sum(x, axis=1, keepdims=True)


def global_avg_pool(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C, 1, 1]."""

    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool expects [N, C, H, W], got {x.shape}")
    return mean(x, axis=(2, 3), keepdims=True)


def reduce(kind: str, x: Tensor) -> Tensor:
    if kind == "sum_channel":
        return sum_channel(x)
    if kind == "global_avg_pool":
        return global_avg_pool(x)
    if kind == "mean_all":
        return mean(x)
    raise ValueError(f"unknown reduction {kind!r}; expected one of {REDUCE_KINDS}")


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if -1 not in shape and int(np.prod(shape)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} ({x.size} elements) into {shape}")
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.shape} into {shape}") from exc
    return Tensor.from_op(out, "reshape", (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"permutation {axes} does not match rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(x.data.transpose(axes), "permute", (x,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    ref = tensors[0].shape
    axis = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != axis):
            raise ShapeError(f"concat along axis {axis}: {ref} and {t.shape} disagree")
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def _backward(g: np.ndarray):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), "concat", tensors, _backward)


def concat_channel(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=1)


def roll2d(x: Tensor, shift: tuple[int, int], axes: tuple[int, int] = (-2, -1)) -> Tensor:
    """Cyclic shift by ``shift`` along ``axes``; the adjoint shifts back."""

    back = (-shift[0], -shift[1])
    return Tensor.from_op(
        np.roll(x.data, shift, axis=axes), "roll2d", (x,),
        lambda g: (np.roll(g, back, axis=axes),),
    )


def slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    axis = axis % x.ndim
    if not 0 <= start < stop <= x.shape[axis]:
        raise ShapeError(f"slice [{start}:{stop}] out of range for axis {axis} of {x.shape}")
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def _backward(g: np.ndarray):
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[index] = g
        return (gx,)

    return Tensor.from_op(x.data[index], "slice", (x,), _backward)


def gather(table: Tensor, index: np.ndarray) -> Tensor:
    """Rows of ``table`` picked by an integer ``index`` array (adjoint scatter-adds)."""

    index = np.asarray(index, dtype=np.int64)

    def _backward(g: np.ndarray):
        gt = np.zeros(table.shape, dtype=g.dtype)
        np.add.at(gt, index, g)
        return (gt,)

    return Tensor.from_op(np.take(table.data, index, axis=0), "gather", (table,), _backward)


def reshape_permute(kind: str, *args: object, **kwargs: object) -> Tensor:
    """Dispatch to a layout primitive by name."""

    table = {"reshape": reshape, "permute": permute, "concat_channel": concat_channel, "roll2d": roll2d}
    if kind not in table:
        raise ValueError(f"unknown layout kind {kind!r}; expected one of {LAYOUT_KINDS}")
    return table[kind](*args, **kwargs)


__all__ = [
    "add",
    "avg_pool_contrast",
    "batch_norm",
    "box_mean",
    "clamp",
    "concat",
    "concat_channel",
    "conv2d",
    "conv2d_transpose",
    "div",
    "elementwise",
    "gather",
    "gelu",
    "global_avg_pool",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "reduce",
    "relu",
    "reshape",
    "reshape_permute",
    "roll2d",
    "permute",
    "sigmoid",
    "slice_axis",
    "softmax",
    "sub",
    "sum",
    "sum_channel",
]
