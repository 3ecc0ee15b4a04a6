"""Layers with explicit forward/backward passes over NCHW float64 arrays."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class LayerShapeError(ValueError):
    def __init__(self, index, layer, message):
        super().__init__(f"layer {index} ({layer}): {message}")
        self.index = index


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def config(self) -> dict:
        return {}

    def zero_grad(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({args})"


def _uniform_fan_in(rng, shape, fan_in, gain=np.sqrt(6.0)):
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv2d(Layer):
    """Stride-1 2-D cross-correlation with symmetric zero padding and a bias."""

    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size, padding=0, rng=None):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.padding = padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = _uniform_fan_in(rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in)
        self.params["bias"] = _uniform_fan_in(rng, (out_channels,), fan_in, gain=1.0)
        self.zero_grad()

    def config(self):
        return dict(in_channels=self.in_channels, out_channels=self.out_channels,
                    kernel_size=self.kernel_size, padding=self.padding)

    def output_shape(self, shape):
        c, h, w = shape
        k, p = self.kernel_size, self.padding
        return (self.out_channels, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def forward(self, x, train=True):
        p, k = self.padding, self.kernel_size
        b, c, h, w = x.shape
        # channels-last so each im2col row copies contiguous channel runs
        xp = np.zeros((b, h + 2 * p, w + 2 * p, c))
        xp[:, p : p + h, p : p + w, :] = x.transpose(0, 2, 3, 1)
        ho, wo = h + 2 * p - k + 1, w + 2 * p - k + 1
        windows = sliding_window_view(xp, (k, k), axis=(1, 2))  # b, ho, wo, c, k, k
        cols = np.ascontiguousarray(windows.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, k * k * c)
        wmat = self.params["weight"].transpose(2, 3, 1, 0).reshape(k * k * c, self.out_channels)
        out = cols @ wmat
        out += self.params["bias"]
        self._cols = cols
        self._geom = (b, c, h, w, ho, wo)
        return np.ascontiguousarray(out.reshape(b, ho, wo, self.out_channels).transpose(0, 3, 1, 2))

    def backward(self, dy):
        k, p = self.kernel_size, self.padding
        b, c, h, w, ho, wo = self._geom
        o = self.out_channels
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(b * ho * wo, o)
        gw = self._cols.T @ dy_flat  # (k, k, c) x o
        self.grads["weight"] += gw.reshape(k, k, c, o).transpose(3, 2, 0, 1)
        self.grads["bias"] += dy_flat.sum(axis=0)
        wmat = self.params["weight"].transpose(2, 3, 1, 0).reshape(k * k * c, o)
        dcols = (dy_flat @ wmat.T).reshape(b, ho, wo, k, k, c)
        dxp = np.zeros((b, h + 2 * p, w + 2 * p, c))
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
        return np.ascontiguousarray(dxp[:, p : p + h, p : p + w, :].transpose(0, 3, 1, 2))


class BatchNorm2d(Layer):
    """Per-channel batch normalization; running statistics use momentum 0.1."""

    kind = "batchnorm2d"

    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.params["gamma"] = np.ones(channels)
        self.params["beta"] = np.zeros(channels)
        self.buffers["running_mean"] = np.zeros(channels)
        self.buffers["running_var"] = np.ones(channels)
        self.zero_grad()

    def config(self):
        return dict(channels=self.channels, momentum=self.momentum, eps=self.eps)

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=True):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            n = x.shape[0] * x.shape[2] * x.shape[3]
            m = self.momentum
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mean
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mean = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        self._xhat, self._inv_std, self._train = xhat, inv_std, train
        return xhat * self.params["gamma"][None, :, None, None] + self.params["beta"][None, :, None, None]

    def backward(self, dy):
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gamma"] += np.sum(dy * xhat, axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        g = (self.params["gamma"] * inv_std)[None, :, None, None]
        if not self._train:
            return dy * g
        dmean = dy.mean(axis=(0, 2, 3), keepdims=True)
        dproj = np.mean(dy * xhat, axis=(0, 2, 3), keepdims=True)
        return g * (dy - dmean - xhat * dproj)


class LeakyReLU(Layer):
    kind = "leaky_relu"

    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def config(self):
        return dict(slope=self.slope)

    def output_shape(self, shape):
        return shape

    def forward(self, x, train=True):
        self._pos = x > 0
        return np.where(self._pos, x, self.slope * x)

    def backward(self, dy):
        return np.where(self._pos, dy, self.slope * dy)


class MaxPool2d(Layer):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""

    kind = "maxpool2d"

    def __init__(self, kernel_size=2, stride=2):
        super().__init__()
        if stride != kernel_size:
            raise ValueError("only non-overlapping pooling (stride == kernel_size) is supported")
        self.kernel_size = kernel_size
        self.stride = stride

    def config(self):
        return dict(kernel_size=self.kernel_size, stride=self.stride)

    def output_shape(self, shape):
        c, h, w = shape
        k = self.kernel_size
        return (c, h // k, w // k)

    def forward(self, x, train=True):
        k = self.kernel_size
        b, c, h, w = x.shape
        ho, wo = h // k, w // k
        if ho == 0 or wo == 0:
            raise ValueError(f"input {h}x{w} smaller than pooling window {k}")
        blocks = x[:, :, : ho * k, : wo * k].reshape(b, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(b, c, ho, wo, k * k)
        # ties go to the first maximal element
        self._arg = blocks.argmax(axis=-1)
        self._in_shape = x.shape
        return np.take_along_axis(blocks, self._arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        k = self.kernel_size
        b, c, h, w = self._in_shape
        ho, wo = dy.shape[2:]
        blocks = np.zeros((b, c, ho, wo, k * k))
        np.put_along_axis(blocks, self._arg[..., None], dy[..., None], axis=-1)
        blocks = blocks.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
        dx = np.zeros(self._in_shape)
        dx[:, :, : ho * k, : wo * k] = blocks
        return dx


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=True):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features, out_features, rng=None):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["weight"] = _uniform_fan_in(rng, (out_features, in_features), in_features)
        self.params["bias"] = _uniform_fan_in(rng, (out_features,), in_features, gain=1.0)
        self.zero_grad()

    def config(self):
        return dict(in_features=self.in_features, out_features=self.out_features)

    def output_shape(self, shape):
        return (self.out_features,)

    def forward(self, x, train=True):
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        self.grads["weight"] += dy.T @ self._x
        self.grads["bias"] += dy.sum(axis=0)
        return dy @ self.params["weight"]


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, BatchNorm2d, LeakyReLU, MaxPool2d, Flatten, Linear)}
