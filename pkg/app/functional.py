"""Differentiable operations on `Tensor`.

Each operation is a `Function` subclass plus a small wrapper function. All
backward rules return one gradient per input, in input order.
Conventions: relu, abs and clamp use subgradient 0 at their kinks; max-pool
and sample_max route the gradient to the first maximal element.
"""
from __future__ import annotations

from typing import Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Function, ShapeError, Tensor

Axis = Union[None, int, Tuple[int, ...]]


def _broadcast_shape(a: np.ndarray, b: np.ndarray) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"operands with shapes {a.shape} and {b.shape} do not broadcast") from exc


# --------------------------------------------------------------------- binary
class Add(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        sa, sb = self.shapes
        return self.unbroadcast(grad, sa), self.unbroadcast(grad, sb)


class Sub(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        sa, sb = self.shapes
        return self.unbroadcast(grad, sa), self.unbroadcast(-grad, sb)


class Mul(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        ga = self.unbroadcast(grad * self.b, self.a.shape) if self.needs_grad[0] else None
        gb = self.unbroadcast(grad * self.a, self.b.shape) if self.needs_grad[1] else None
        return ga, gb


class Div(Function):
    def forward(self, a, b):
        _broadcast_shape(a, b)
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        ga = self.unbroadcast(grad / self.b, self.a.shape) if self.needs_grad[0] else None
        gb = self.unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape) if self.needs_grad[1] else None
        return ga, gb


class MatMul(Function):
    def forward(self, a, b):
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul needs (n, k) @ (k, m), got {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        ga = grad @ self.b.T if self.needs_grad[0] else None
        gb = self.a.T @ grad if self.needs_grad[1] else None
        return ga, gb


def add(a, b) -> Tensor:
    return Add.apply(a, b)


def sub(a, b) -> Tensor:
    return Sub.apply(a, b)


def mul(a, b) -> Tensor:
    return Mul.apply(a, b)


def div(a, b) -> Tensor:
    return Div.apply(a, b)


def neg(a) -> Tensor:
    return Mul.apply(a, -1.0)


def matmul(a, b) -> Tensor:
    return MatMul.apply(a, b)


# ---------------------------------------------------------------------- unary
class Tanh(Function):
    def forward(self, x):
        self.y = np.tanh(x)
        return self.y

    def backward(self, grad):
        return (grad * (1.0 - self.y * self.y),)


class Relu(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0.0)

    def backward(self, grad):
        return (grad * self.mask,)


class Sigmoid(Function):
    def forward(self, x):
        # stable for large |x|
        e = np.exp(-np.abs(x))
        self.y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return self.y

    def backward(self, grad):
        return (grad * self.y * (1.0 - self.y),)


class Exp(Function):
    def forward(self, x):
        self.y = np.exp(x)
        return self.y

    def backward(self, grad):
        return (grad * self.y,)


class Log(Function):
    def forward(self, x):
        self.x = x
        return np.log(x)

    def backward(self, grad):
        return (grad / self.x,)


class Abs(Function):
    def forward(self, x):
        self.sign = np.sign(x)
        return np.abs(x)

    def backward(self, grad):
        return (grad * self.sign,)


class Clamp(Function):
    def forward(self, x, low=None, high=None):
        inside = np.ones(x.shape, dtype=bool)
        if low is not None:
            inside &= x > low
        if high is not None:
            inside &= x < high
        self.inside = inside
        return np.clip(x, low, high)

    def backward(self, grad):
        return (grad * self.inside,)


def tanh(x) -> Tensor:
    return Tanh.apply(x)


def relu(x) -> Tensor:
    return Relu.apply(x)


def sigmoid(x) -> Tensor:
    return Sigmoid.apply(x)


def exp(x) -> Tensor:
    return Exp.apply(x)


def log(x) -> Tensor:
    return Log.apply(x)


def abs(x) -> Tensor:  # noqa: A001
    return Abs.apply(x)


def clamp(x, low: Optional[float] = None, high: Optional[float] = None) -> Tensor:
    return Clamp.apply(x, low=low, high=high)


# ----------------------------------------------------------------- reductions
def _expand(grad: np.ndarray, shape: Tuple[int, ...], axis: Axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        grad = np.expand_dims(grad, axes)
    return np.broadcast_to(grad, shape).copy()


class Sum(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        return (_expand(grad, self.shape, self.axis, self.keepdims),)


class Mean(Function):
    def forward(self, x, axis=None, keepdims=False):
        self.shape, self.axis, self.keepdims = x.shape, axis, keepdims
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        self.count = x.size / max(out.size, 1) if x.size else 1.0
        return out

    def backward(self, grad):
        return (_expand(grad, self.shape, self.axis, self.keepdims) / self.count,)


class SampleMax(Function):
    """Max over every axis but the first, kept as N x 1 x ... x 1."""

    def forward(self, x):
        n = x.shape[0]
        flat = x.reshape(n, -1)
        self.index = flat.argmax(axis=1)
        self.shape = x.shape
        return flat[np.arange(n), self.index].reshape((n,) + (1,) * (x.ndim - 1))

    def backward(self, grad):
        n = self.shape[0]
        gx = np.zeros((n, int(np.prod(self.shape[1:]))))
        gx[np.arange(n), self.index] = grad.reshape(n)
        return (gx.reshape(self.shape),)


def sample_max(x) -> Tensor:
    return SampleMax.apply(x)


def sum(x, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    return Sum.apply(x, axis=axis, keepdims=keepdims)


def mean(x, axis: Axis = None, keepdims: bool = False) -> Tensor:
    return Mean.apply(x, axis=axis, keepdims=keepdims)


class LogSoftmax(Function):
    def forward(self, x, axis=-1):
        shifted = x - x.max(axis=axis, keepdims=True)
        y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.softmax, self.axis = np.exp(y), axis
        return y

    def backward(self, grad):
        return (grad - self.softmax * grad.sum(axis=self.axis, keepdims=True),)


def log_softmax(x, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(x, axis=axis)


# ---------------------------------------------------------------------- shape
class Reshape(Function):
    def forward(self, x, shape=()):
        self.shape = x.shape
        try:
            return x.reshape(shape)
        except ValueError as exc:
            raise ShapeError(f"cannot reshape {x.shape} into {shape}") from exc

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, x, axes=None):
        axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
        self.inverse = tuple(np.argsort(axes))
        return np.ascontiguousarray(x.transpose(axes))

    def backward(self, grad):
        return (np.ascontiguousarray(grad.transpose(self.inverse)),)


def reshape(x, shape: Sequence[int]) -> Tensor:
    return Reshape.apply(x, shape=tuple(shape))


def transpose(x, axes: Optional[Sequence[int]] = None) -> Tensor:
    return Transpose.apply(x, axes=axes)


# -------------------------------------------------------------------- spatial
def conv_output_extent(extent: int, kernel: int, stride: int, padding: int) -> int:
    """Output length of a convolution; the geometry must land exactly."""
    if stride < 1 or padding < 0:
        raise ShapeError(f"invalid stride {stride} / padding {padding}")
    span = extent + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ShapeError(
            f"(extent {extent} + 2*{padding} - kernel {kernel}) / stride {stride} is not a nonnegative integer"
        )
    return span // stride + 1


class Conv2d(Function):
    """Cross-correlation of NCHW input with an OxIxKxK kernel, zero padding."""

    def forward(self, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or w.ndim != 4:
            raise ShapeError(f"conv2d needs NCHW input and OIKK kernel, got {x.shape} and {w.shape}")
        n, c, h, wd = x.shape
        o, i, kh, kw = w.shape
        if kh != kw:
            raise ShapeError(f"conv2d kernel must be square, got {kh}x{kw}")
        if i != c:
            raise ShapeError(f"input has {c} channels but kernel expects {i}")
        if b.shape != (o,):
            raise ShapeError(f"bias shape {b.shape} does not match {o} output channels")
        ho = conv_output_extent(h, kh, stride, padding)
        wo = conv_output_extent(wd, kw, stride, padding)

        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(windows, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
        out = out.transpose(0, 3, 1, 2) + b.reshape(1, o, 1, 1)

        self.x_shape, self.xp_shape = x.shape, xp.shape
        self.windows, self.w = windows, w
        self.stride, self.padding, self.out_hw = stride, padding, (ho, wo)
        return np.ascontiguousarray(out)

    def backward(self, grad):
        gx = gw = gb = None
        if self.needs_grad[1]:
            gw = np.tensordot(grad, self.windows, axes=([0, 2, 3], [0, 2, 3]))
        if self.needs_grad[2]:
            gb = grad.sum(axis=(0, 2, 3))
        if self.needs_grad[0]:
            s, p = self.stride, self.padding
            ho, wo = self.out_hw
            k = self.w.shape[2]
            cols = np.tensordot(grad, self.w, axes=([1], [0]))  # N, Ho, Wo, C, K, K
            gxp = np.zeros(self.xp_shape)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            h, wd = self.x_shape[2], self.x_shape[3]
            gx = np.ascontiguousarray(gxp[:, :, p:p + h, p:p + wd])
        return gx, gw, gb


def conv2d(x, kernel, bias, stride: int = 1, padding: int = 0) -> Tensor:
    return Conv2d.apply(x, kernel, bias, stride=stride, padding=padding)


class MaxPool2d(Function):
    """Non-overlapping max pooling (window == stride)."""

    def forward(self, x, size=2):
        if x.ndim != 4:
            raise ShapeError(f"max_pool2d needs NCHW input, got {x.shape}")
        n, c, h, w = x.shape
        if h % size or w % size:
            raise ShapeError(f"spatial extent {h}x{w} is not divisible by pool size {size}")
        ho, wo = h // size, w // size
        blocks = x.reshape(n, c, ho, size, wo, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, size * size)
        self.index = blocks.argmax(axis=-1)
        self.shape, self.size = x.shape, size
        return np.take_along_axis(blocks, self.index[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        n, c, h, w = self.shape
        k = self.size
        ho, wo = h // k, w // k
        blocks = np.zeros((n, c, ho, wo, k * k))
        np.put_along_axis(blocks, self.index[..., None], grad[..., None], axis=-1)
        gx = blocks.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)


def max_pool2d(x, size: int = 2) -> Tensor:
    return MaxPool2d.apply(x, size=size)


def global_avg_pool(x) -> Tensor:
    """NCHW -> NC mean over the spatial axes."""
    if x.ndim != 4:
        raise ShapeError(f"global_avg_pool needs NCHW input, got {x.shape}")
    return mean(x, axis=(2, 3))


def interpolation_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Rows are corner-aligned linear interpolation weights."""
    weights = np.zeros((n_out, n_in))
    if n_in == 1:
        weights[:, 0] = 1.0
        return weights
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    low = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - low
    rows = np.arange(n_out)
    weights[rows, low] = 1.0 - frac
    weights[rows, low + 1] += frac
    return weights


class UpsampleBilinear(Function):
    def forward(self, x, out_h=1, out_w=1):
        if x.ndim != 4:
            raise ShapeError(f"upsample_bilinear needs NCHW input, got {x.shape}")
        h, w = x.shape[2], x.shape[3]
        if out_h < h or out_w < w:
            raise ShapeError(f"upsample_bilinear cannot downscale {h}x{w} to {out_h}x{out_w}")
        self.ry = interpolation_matrix(h, out_h)
        self.rx = interpolation_matrix(w, out_w)
        return self.ry @ x @ self.rx.T

    def backward(self, grad):
        return (self.ry.T @ grad @ self.rx,)


def upsample_bilinear(x, out_h: int, out_w: int) -> Tensor:
    return UpsampleBilinear.apply(x, out_h=out_h, out_w=out_w)
