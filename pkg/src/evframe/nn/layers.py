"""From-scratch neural-network layers on numpy arrays.

Every layer is a forward/backward pair: forward caches whatever backward
needs, backward takes the upstream gradient and returns the gradient
w.r.t. the input while *accumulating* parameter gradients into
``layer.grads`` (call zero_grads before each optimization step; the
accumulation is what makes shared submodules work).

Conventions, fixed here and relied on by the accounting module:

* conv weight layout ``(C_out, C_in, k, k)``, cross-correlation (no
  kernel flip), bias added per output channel;
* linear weight layout ``(F_out, F_in)``, ``y = x @ W.T + b``;
* maxpool gradient goes to the first (row-major) maximal element of each
  window;
* relu derivative at exactly 0 is taken as 0.

Parameters are initialized Kaiming-uniform over fan-in for conv/linear
(biases zero) and gamma=1/beta=0 for batchnorm.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Dict, Iterator, List, Tuple

import numpy as np

from ..errors import DegenerateBatch, ShapeMismatch

_CHECK_FINITE = False


@contextmanager
def debug_finite_checks():
    """Raise FloatingPointError from any kernel that emits NaN/Inf."""
    global _CHECK_FINITE
    _CHECK_FINITE = True
    try:
        yield
    finally:
        _CHECK_FINITE = False


def _guard_finite(name: str, arr: np.ndarray) -> np.ndarray:
    if _CHECK_FINITE and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{name} produced non-finite values")
    return arr


class Layer:
    """Base layer: parameter/gradient dicts plus a forward/backward pair."""

    def __init__(self):
        self.params: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        self.buffers: Dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def children(self) -> List[Tuple[str, "Layer"]]:
        return []

    def __call__(self, x, train=False):
        return self.forward(x, train=train)


# --- tree walking ---------------------------------------------------------

def named_params(layer: Layer, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
    for k, v in layer.params.items():
        yield prefix + k, v
    for name, child in layer.children():
        yield from named_params(child, f"{prefix}{name}.")


def named_grads(layer: Layer, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
    for k, v in layer.grads.items():
        yield prefix + k, v
    for name, child in layer.children():
        yield from named_grads(child, f"{prefix}{name}.")


def named_buffers(layer: Layer, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
    for k, v in layer.buffers.items():
        yield prefix + k, v
    for name, child in layer.children():
        yield from named_buffers(child, f"{prefix}{name}.")


def zero_grads(layer: Layer) -> None:
    for g in layer.grads.values():
        g[...] = 0
    for _, child in layer.children():
        zero_grads(child)


def state_dict(layer: Layer) -> Dict[str, np.ndarray]:
    """All params and buffers by hierarchical name (buffers prefixed)."""
    state = {name: arr for name, arr in named_params(layer)}
    for name, arr in named_buffers(layer):
        state["buffer." + name] = arr
    return state


def load_state(layer: Layer, state: Dict[str, np.ndarray]) -> None:
    """Copy arrays from a state dict into the layer tree, shape-checked."""
    for name, arr in named_params(layer):
        src = state[name]
        if src.shape != arr.shape:
            raise ShapeMismatch(f"param {name}: stored {src.shape} != model {arr.shape}")
        arr[...] = src
    for name, arr in named_buffers(layer):
        src = state["buffer." + name]
        if src.shape != arr.shape:
            raise ShapeMismatch(f"buffer {name}: stored {src.shape} != model {arr.shape}")
        arr[...] = src


# --- im2col / col2im -------------------------------------------------------

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0 or span % stride != 0:
        raise ShapeMismatch(
            f"window k={k} stride={stride} padding={padding} does not tile size {size}"
        )
    return span // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (N, C, H, W) into (N*oh*ow, C*kh*kw) patch rows."""
    n, c, h, w = x.shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            col[:, :, i, j] = x[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return col.transpose(0, 4, 5, 1, 2, 3).reshape(n * oh * ow, c * kh * kw)


def col2im(col: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Fold patch rows back onto (N, C, H, W), summing overlaps."""
    n, c, h, w = x_shape
    oh = conv_output_size(h, kh, stride, pad)
    ow = conv_output_size(w, kw, stride, pad)
    col = col.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=col.dtype)
    for i in range(kh):
        for j in range(kw):
            img[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += col[:, :, i, j]
    return img[:, :, pad:pad + h, pad:pad + w]


# --- layers ----------------------------------------------------------------

def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """2-D cross-correlation with bias, via im2col + matrix multiply."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int,
                 stride: int = 1, padding: int = 0, bias: bool = True,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.params["weight"] = _kaiming_uniform(
            rng, (out_channels, in_channels, kernel_size, kernel_size), fan_in, dtype)
        self.grads["weight"] = np.zeros_like(self.params["weight"])
        if bias:
            self.params["bias"] = np.zeros(out_channels, dtype=dtype)
            self.grads["bias"] = np.zeros_like(self.params["bias"])
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(
                f"conv expects (N, {self.in_channels}, H, W), got {x.shape}")
        n = x.shape[0]
        k, s, p = self.kernel_size, self.stride, self.padding
        oh = conv_output_size(x.shape[2], k, s, p)
        ow = conv_output_size(x.shape[3], k, s, p)
        col = im2col(x, k, k, s, p)
        w_col = self.params["weight"].reshape(self.out_channels, -1)
        out = col @ w_col.T
        if "bias" in self.params:
            out = out + self.params["bias"]
        out = out.reshape(n, oh, ow, self.out_channels).transpose(0, 3, 1, 2)
        self._cache = (x.shape, col)
        return _guard_finite("conv2d", out)

    def backward(self, dout):
        x_shape, col = self._cache
        k, s, p = self.kernel_size, self.stride, self.padding
        dflat = dout.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        if "bias" in self.params:
            self.grads["bias"] += dflat.sum(axis=0)
        self.grads["weight"] += (dflat.T @ col).reshape(self.params["weight"].shape)
        dcol = dflat @ self.params["weight"].reshape(self.out_channels, -1)
        return _guard_finite("conv2d.backward", col2im(dcol, x_shape, k, k, s, p))


class Linear(Layer):
    """Affine map y = x @ W.T + b with W of shape (F_out, F_in)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features = in_features
        self.out_features = out_features
        self.params["weight"] = _kaiming_uniform(
            rng, (out_features, in_features), in_features, dtype)
        self.grads["weight"] = np.zeros_like(self.params["weight"])
        if bias:
            self.params["bias"] = np.zeros(out_features, dtype=dtype)
            self.grads["bias"] = np.zeros_like(self.params["bias"])
        self._x = None

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"linear expects (N, {self.in_features}), got {x.shape}")
        self._x = x
        out = x @ self.params["weight"].T
        if "bias" in self.params:
            out = out + self.params["bias"]
        return _guard_finite("linear", out)

    def backward(self, dout):
        self.grads["weight"] += dout.T @ self._x
        if "bias" in self.params:
            self.grads["bias"] += dout.sum(axis=0)
        return _guard_finite("linear.backward", dout @ self.params["weight"])


class BatchNorm2d(Layer):
    """Per-channel batch normalization with running statistics.

    Train mode normalizes by biased batch variance and updates running
    stats as ``running = momentum * running + (1 - momentum) * batch``
    (unbiased variance in the running estimate); eval mode normalizes by
    the running stats. Both modes then scale/shift by gamma/beta.
    """

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.9,
                 dtype=np.float32):
        super().__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.grads["gamma"] = np.zeros_like(self.params["gamma"])
        self.grads["beta"] = np.zeros_like(self.params["beta"])
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"batchnorm expects (N, {self.channels}, H, W), got {x.shape}")
        n, c, h, w = x.shape
        m = n * h * w
        gamma = self.params["gamma"].reshape(1, c, 1, 1)
        beta = self.params["beta"].reshape(1, c, 1, 1)
        if train:
            if m < 2:
                raise DegenerateBatch(f"need at least 2 values per channel, got {m}")
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = (x - mean.reshape(1, c, 1, 1)) * inv_std.reshape(1, c, 1, 1)
            mom = self.momentum
            self.buffers["running_mean"][...] = mom * self.buffers["running_mean"] + (1 - mom) * mean
            self.buffers["running_var"][...] = (
                mom * self.buffers["running_var"] + (1 - mom) * var * m / (m - 1))
        else:
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"] + self.eps)
            xhat = ((x - self.buffers["running_mean"].reshape(1, c, 1, 1))
                    * inv_std.reshape(1, c, 1, 1))
        self._cache = (xhat, inv_std, m, train)
        return _guard_finite("batchnorm2d", gamma * xhat + beta)

    def backward(self, dout):
        xhat, inv_std, m, train = self._cache
        c = self.channels
        sum_dout = dout.sum(axis=(0, 2, 3))
        sum_dout_xhat = (dout * xhat).sum(axis=(0, 2, 3))
        self.grads["gamma"] += sum_dout_xhat
        self.grads["beta"] += sum_dout
        scale = (self.params["gamma"] * inv_std).reshape(1, c, 1, 1)
        if train:
            dx = scale * (dout
                          - sum_dout.reshape(1, c, 1, 1) / m
                          - xhat * sum_dout_xhat.reshape(1, c, 1, 1) / m)
        else:
            dx = scale * dout
        return _guard_finite("batchnorm2d.backward", dx)


class ReLU(Layer):
    def __init__(self):
        super().__init__()
        self._mask = None

    def forward(self, x, train=False):
        self._mask = x > 0
        return _guard_finite("relu", np.where(self._mask, x, 0))

    def backward(self, dout):
        return dout * self._mask


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """1 / (1 + exp(-x)) split by sign so exp never overflows."""
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    return y


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, train=False):
        self._y = stable_sigmoid(x)
        return _guard_finite("sigmoid", self._y)

    def backward(self, dout):
        return dout * self._y * (1.0 - self._y)


class MaxPool2d(Layer):
    """Valid (unpadded) window max; trailing rows/cols that do not fill a
    full stride step are dropped, as in standard floor-mode pooling."""

    def __init__(self, kernel_size: int, stride: int | None = None):
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride if stride is not None else kernel_size
        self._cache = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        k, s = self.kernel_size, self.stride
        if h < k or w < k:
            raise ShapeMismatch(f"cannot pool {h}x{w} with window {k}")
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        # crop so the windows tile exactly, then pool via im2col rows
        hc, wc = k + s * (oh - 1), k + s * (ow - 1)
        col = im2col(x[:, :, :hc, :wc].reshape(n * c, 1, hc, wc), k, k, s, 0)
        arg = np.argmax(col, axis=1)  # first max wins on ties
        out = col[np.arange(col.shape[0]), arg]
        self._cache = (x.shape, (n, c, hc, wc), col.shape, arg)
        return _guard_finite("maxpool2d", out.reshape(n * c, oh, ow).reshape(n, c, oh, ow))

    def backward(self, dout):
        x_shape, crop_shape, col_shape, arg = self._cache
        n, c, hc, wc = crop_shape
        k, s = self.kernel_size, self.stride
        dcol = np.zeros(col_shape, dtype=dout.dtype)
        dcol[np.arange(col_shape[0]), arg] = dout.reshape(-1)
        dx_crop = col2im(dcol, (n * c, 1, hc, wc), k, k, s, 0).reshape(n, c, hc, wc)
        dx = np.zeros(x_shape, dtype=dout.dtype)
        dx[:, :, :hc, :wc] = dx_crop
        return dx


class GlobalAvgPool(Layer):
    """Spatial mean to (N, C, 1, 1)."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, dout):
        n, c, h, w = self._shape
        return np.broadcast_to(dout / (h * w), self._shape).copy()


class GlobalMaxPool(Layer):
    """Spatial max to (N, C, 1, 1); gradient to the first maximal pixel."""

    def __init__(self):
        super().__init__()
        self._cache = None

    def forward(self, x, train=False):
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        arg = np.argmax(flat, axis=2)
        out = np.take_along_axis(flat, arg[:, :, None], axis=2)
        self._cache = (x.shape, arg)
        return out.reshape(n, c, 1, 1)

    def backward(self, dout):
        shape, arg = self._cache
        n, c, h, w = shape
        dx = np.zeros((n, c, h * w), dtype=dout.dtype)
        np.put_along_axis(dx, arg[:, :, None], dout.reshape(n, c, 1), axis=2)
        return dx.reshape(shape)


class Flatten(Layer):
    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Sequential(Layer):
    """Layers applied in order; optional names label checkpoint entries."""

    def __init__(self, *layers: Layer, names: List[str] | None = None):
        super().__init__()
        self.layers = list(layers)
        if names is not None and len(names) != len(self.layers):
            raise ValueError("one name per layer required")
        self.names = names

    def children(self):
        if self.names is None:
            return [(str(i), layer) for i, layer in enumerate(self.layers)]
        return list(zip(self.names, self.layers))

    def forward(self, x, train=False):
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout
