"""Layer primitives: dense, 2-D convolution, ReLU, max-pool and flatten.

Every layer is a plain object holding its parameters as float64 numpy
arrays.  Layers are stateless with respect to activations: ``forward``
takes a batched input ``(n, ...)`` and returns the batched output, and
``backward`` takes the same input together with the upstream gradient
and returns the input gradient plus per-parameter gradients.  Keeping
activations out of the layers lets one recorded forward pass serve both
training and relevance propagation.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DENSE = "dense"
CONV2D = "conv2d"
RELU = "relu"
MAXPOOL = "maxpool"
FLATTEN = "flatten"

PARAMETERIZED_KINDS = frozenset({DENSE, CONV2D})


def _as_f64(a, shape, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {out.shape}")
    return out


class Dense:
    """Fully connected layer: ``y = x @ W.T + b``."""

    kind = DENSE

    def __init__(self, in_width: int, out_width: int, *, weight=None, bias=None):
        if in_width < 1 or out_width < 1:
            raise ValueError("dense widths must be positive")
        self.in_width = int(in_width)
        self.out_width = int(out_width)
        wshape = (self.out_width, self.in_width)
        self.weight = np.zeros(wshape) if weight is None else _as_f64(weight, wshape, "weight")
        self.bias = np.zeros(out_width) if bias is None else _as_f64(bias, (self.out_width,), "bias")

    def init_params(self, rng: np.random.Generator) -> None:
        bound = 1.0 / math.sqrt(self.in_width)
        self.weight = rng.uniform(-bound, bound, size=self.weight.shape)
        self.bias = np.zeros(self.out_width)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if in_shape != (self.in_width,):
            raise ValueError(f"dense layer expects input shape ({self.in_width},), got {in_shape}")
        return (self.out_width,)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x @ self.weight.T + self.bias

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        grad_x = grad_y @ self.weight
        grads = {"weight": grad_y.T @ x, "bias": grad_y.sum(axis=0)}
        return grad_x, grads

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


def _conv_cols(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """im2col: ``(n, C, H, W) -> (n, oh*ow, C*kernel*kernel)``."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(x, (kernel, kernel), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = windows.shape
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, c * kernel * kernel)
    return np.ascontiguousarray(cols)


def _cols_to_image(
    cols: np.ndarray, x_shape: tuple[int, ...], kernel: int, stride: int, padding: int
) -> np.ndarray:
    """Scatter-add ``(n, oh*ow, C*k*k)`` columns back onto the input grid."""
    n, c, h, w = x_shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kernel) // stride + 1
    ow = (wp - kernel) // stride + 1
    patches = cols.reshape(n, oh, ow, c, kernel, kernel)
    out = np.zeros((n, c, hp, wp))
    for i in range(kernel):
        for j in range(kernel):
            out[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if padding:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


class Conv2D:
    """2-D convolution over ``(n, C, H, W)`` inputs with square kernels."""

    kind = CONV2D

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        *,
        weight=None,
        bias=None,
    ):
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ValueError("invalid conv2d parameters")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        wshape = (self.out_channels, self.in_channels, self.kernel_size, self.kernel_size)
        self.weight = np.zeros(wshape) if weight is None else _as_f64(weight, wshape, "weight")
        self.bias = np.zeros(out_channels) if bias is None else _as_f64(bias, (self.out_channels,), "bias")

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.in_channels * self.kernel_size * self.kernel_size
        bound = 1.0 / math.sqrt(fan_in)
        self.weight = rng.uniform(-bound, bound, size=self.weight.shape)
        self.bias = np.zeros(self.out_channels)

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ValueError(
                f"conv2d expects input shape ({self.in_channels}, H, W), got {in_shape}"
            )
        _, h, w = in_shape
        oh = (h + 2 * self.padding - self.kernel_size) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_size) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(f"conv2d kernel {self.kernel_size} does not fit input {in_shape}")
        return (self.out_channels, oh, ow)

    def _wmat(self, weight: np.ndarray) -> np.ndarray:
        return weight.reshape(self.out_channels, -1)

    def forward_with_weight(self, x: np.ndarray, weight: np.ndarray) -> np.ndarray:
        """Convolution response of ``x`` under an alternative weight tensor, no bias."""
        _, _, oh, ow = (x.shape[0],) + self.out_shape(x.shape[1:])
        cols = _conv_cols(x, self.kernel_size, self.stride, self.padding)
        out = cols @ self._wmat(weight).T
        return out.transpose(0, 2, 1).reshape(x.shape[0], self.out_channels, oh, ow)

    def backprop_to_input(
        self, grad_y: np.ndarray, weight: np.ndarray, x_shape: tuple[int, ...]
    ) -> np.ndarray:
        """Input gradient of the conv response (transposed convolution)."""
        n = grad_y.shape[0]
        g = grad_y.reshape(n, self.out_channels, -1).transpose(0, 2, 1)
        grad_cols = g @ self._wmat(weight)
        return _cols_to_image(grad_cols, (n,) + tuple(x_shape[1:]), self.kernel_size, self.stride, self.padding)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_with_weight(x, self.weight) + self.bias[None, :, None, None]

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        n = x.shape[0]
        cols = _conv_cols(x, self.kernel_size, self.stride, self.padding)
        g = grad_y.reshape(n, self.out_channels, -1).transpose(0, 2, 1)  # (n, oh*ow, out_c)
        grad_w = np.einsum("npo,npq->oq", g, cols).reshape(self.weight.shape)
        grad_b = g.sum(axis=(0, 1))
        grad_x = self.backprop_to_input(grad_y, self.weight, x.shape)
        return grad_x, {"weight": grad_w, "bias": grad_b}

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}


class ReLU:
    kind = RELU

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        return grad_y * (x > 0), {}


class MaxPool2D:
    """Max pooling over ``(n, C, H, W)``; stride defaults to the window size."""

    kind = MAXPOOL

    def __init__(self, window: int, stride: int | None = None):
        if window < 1:
            raise ValueError("pool window must be positive")
        self.window = int(window)
        self.stride = int(stride) if stride is not None else int(window)
        if self.stride < 1:
            raise ValueError("pool stride must be positive")

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        if len(in_shape) != 3:
            raise ValueError(f"maxpool expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if h < self.window or w < self.window:
            raise ValueError(f"pool window {self.window} does not fit input {in_shape}")
        return (c, (h - self.window) // self.stride + 1, (w - self.window) // self.stride + 1)

    def _windows(self, x: np.ndarray) -> np.ndarray:
        v = sliding_window_view(x, (self.window, self.window), axis=(2, 3))
        return v[:, :, :: self.stride, :: self.stride]

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._windows(x).max(axis=(4, 5))

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        # Winner-takes-all: each pooled cell routes its gradient to the first
        # maximal entry of its window (np.argmax order fixes ties).
        v = self._windows(x)
        n, c, oh, ow, _, _ = v.shape
        flat = v.reshape(n, c, oh, ow, -1)
        winners = flat.argmax(axis=-1)
        routed = np.zeros_like(flat)
        np.put_along_axis(routed, winners[..., None], grad_y[..., None], axis=-1)
        patches = routed.reshape(n, c, oh, ow, self.window, self.window)
        grad_x = np.zeros_like(x)
        s = self.stride
        for i in range(self.window):
            for j in range(self.window):
                grad_x[:, :, i : i + oh * s : s, j : j + ow * s : s] += patches[:, :, :, :, i, j]
        return grad_x, {}


class Flatten:
    kind = FLATTEN

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return (int(np.prod(in_shape)),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1)

    def backward(self, x: np.ndarray, grad_y: np.ndarray):
        return grad_y.reshape(x.shape), {}


Layer = Dense | Conv2D | ReLU | MaxPool2D | Flatten
