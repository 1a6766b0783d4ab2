"""Layers with explicit forward/backward passes over NCHW arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


class Layer:
    kind = "layer"
    params: dict[str, np.ndarray]

    def __init__(self):
        self.params = {}
        self.grads: dict[str, np.ndarray] = {}

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> str:
        return self.kind


def im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    """Rows are output positions ``(n, i, j)``; columns are ``(c, di, dj)``."""
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


class Conv2D(Layer):
    """Convolution with zero padding ``k // 2`` ("same" at stride 1)."""

    kind = "conv"

    def __init__(self, in_channels: int, out_channels: int, kernel: int, stride: int = 1):
        super().__init__()
        if kernel % 2 == 0:
            raise ShapeError("conv kernels must have odd size")
        self.in_channels, self.out_channels, self.kernel, self.stride = in_channels, out_channels, kernel, stride
        self.pad = kernel // 2
        self.params = {
            "W": np.zeros((out_channels, in_channels, kernel, kernel)),
            "b": np.zeros(out_channels),
        }
        self.needs_input_grad = True

    def output_shape(self, in_shape):
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv expects {self.in_channels} channels, got {c}")
        ho = (h + 2 * self.pad - self.kernel) // self.stride + 1
        wo = (w + 2 * self.pad - self.kernel) // self.stride + 1
        return (self.out_channels, ho, wo)

    def forward(self, x, train=False):
        W, b = self.params["W"], self.params["b"]
        cols, ho, wo = im2col(x, self.kernel, self.stride, self.pad)
        out = cols @ W.reshape(self.out_channels, -1).T
        out += b
        self._cache = (x.shape, cols)
        return out.reshape(x.shape[0], ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dout):
        xshape, cols = self._cache
        W = self.params["W"]
        n, o, ho, wo = dout.shape
        d = dout.transpose(0, 2, 3, 1).reshape(-1, o)
        self.grads["W"] = (d.T @ cols).reshape(W.shape)
        self.grads["b"] = d.sum(axis=0)
        if not self.needs_input_grad:
            return None
        if self.stride == 1:
            # input gradient is the correlation of dout with the 180-degree rotated, channel-swapped kernel
            Wt = W.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
            dcols, _, _ = im2col(dout, self.kernel, 1, self.pad)
            dx = dcols @ Wt.reshape(self.in_channels, -1).T
            return dx.reshape(n, xshape[2], xshape[3], self.in_channels).transpose(0, 3, 1, 2)
        dcols = (d @ W.reshape(o, -1)).reshape(n, ho, wo, self.in_channels, self.kernel, self.kernel)
        p, s = self.pad, self.stride
        dxp = np.zeros((n, self.in_channels, xshape[2] + 2 * p, xshape[3] + 2 * p), dtype=dout.dtype)
        for i in range(self.kernel):
            for j in range(self.kernel):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p : p + xshape[2], p : p + xshape[3]]

    def spec(self):
        return f"conv:{self.out_channels}:{self.kernel}:{self.stride}"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, dout):
        return np.where(self._mask, dout, 0).astype(dout.dtype, copy=False)


class MaxPool2D(Layer):
    """Max pooling without padding; the gradient goes to the first maximum in each window."""

    kind = "maxpool"

    def __init__(self, kernel: int = 2, stride: int = 2):
        super().__init__()
        self.kernel, self.stride = kernel, stride

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ho, wo = (h - self.kernel) // self.stride + 1, (w - self.kernel) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"pool window {self.kernel} larger than input {h}x{w}")
        return (c, ho, wo)

    def forward(self, x, train=False):
        k, s = self.kernel, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n, c, ho, wo = win.shape[:4]
        flat = win.reshape(n, c, ho, wo, k * k)
        arg = flat.argmax(axis=-1)
        self._cache = (x.shape, arg, ho, wo)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        xshape, arg, ho, wo = self._cache
        k, s = self.kernel, self.stride
        n, c = xshape[:2]
        di, dj = np.divmod(arg, k)
        rows = np.arange(ho)[None, None, :, None] * s + di
        cols = np.arange(wo)[None, None, None, :] * s + dj
        dx = np.zeros(xshape, dtype=dout.dtype)
        nn = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        if k <= s:
            # windows do not overlap, so each input pixel is hit at most once
            dx[nn, cc, rows, cols] = dout
        else:
            np.add.at(dx, (nn, cc, rows, cols), dout)
        return dx

    def spec(self):
        return f"maxpool:{self.kernel}:{self.stride}"


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features: int, units: int):
        super().__init__()
        self.in_features, self.units = in_features, units
        self.params = {"W": np.zeros((in_features, units)), "b": np.zeros(units)}

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != self.in_features:
            raise ShapeError(f"dense expects {self.in_features} inputs, got {in_shape}")
        return (self.units,)

    def forward(self, x, train=False):
        self._xshape = x.shape
        flat = x.reshape(x.shape[0], -1)
        self._x = flat
        return flat @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self._x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return (dout @ self.params["W"].T).reshape(self._xshape)

    def spec(self):
        return f"dense:{self.units}"


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    kind = "dropout"

    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (self.rng.random(x.shape) < keep).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout):
        return dout if self._mask is None else dout * self._mask

    def spec(self):
        return f"dropout:{self.rate}"


class Softmax(Layer):
    """Row-wise softmax. Training uses the fused cross-entropy gradient in the model."""

    kind = "softmax"

    def forward(self, x, train=False):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def backward(self, dout):
        raise NotImplementedError("softmax is trained through the fused cross-entropy gradient")
