"""Convolutional block attention: channel gate, spatial gate, and their
composition.

Channel attention squeezes the feature map through global average- and
max-pooling, pushes both descriptors through one shared two-layer MLP
(hidden width max(1, C // reduction), ReLU in between), sums the two
paths and gates every channel with a sigmoid. Spatial attention pools
across channels (mean and max), convolves the 2-channel map with a
single k x k filter (padding k // 2 keeps the shape) and gates every
location. Both refine multiplicatively, so outputs never exceed inputs
in magnitude and shapes are preserved.

The composition order is configurable; channel-first is the default.
After a forward pass each gate is kept on the layer as ``last_gate``.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeMismatch
from .nn.layers import (Conv2d, GlobalAvgPool, GlobalMaxPool, Layer, Linear,
                        ReLU, stable_sigmoid)

CBAM_ORDERS = ("cam_then_sam", "sam_then_cam")


class ChannelAttention(Layer):
    """Per-channel sigmoid gate from pooled descriptors through a shared MLP."""

    def __init__(self, channels: int, reduction: int = 16,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = max(1, channels // reduction)
        self.channels = channels
        self.reduction = reduction
        self.hidden = hidden
        self.fc1 = Linear(channels, hidden, dtype=dtype, rng=rng)
        self.fc2 = Linear(hidden, channels, dtype=dtype, rng=rng)
        self.relu = ReLU()
        self.avg_pool = GlobalAvgPool()
        self.max_pool = GlobalMaxPool()
        self.last_gate = None
        self._cache = None

    def children(self):
        return [("fc1", self.fc1), ("fc2", self.fc2)]

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"expected (N, {self.channels}, H, W), got {x.shape}")
        n = x.shape[0]
        # both descriptors share the MLP: stack them along the batch axis
        # so one pass through fc1/fc2 serves both paths
        avg = self.avg_pool.forward(x, train).reshape(n, self.channels)
        mx = self.max_pool.forward(x, train).reshape(n, self.channels)
        desc = np.concatenate([avg, mx], axis=0)
        h = self.fc2.forward(self.relu.forward(self.fc1.forward(desc, train), train), train)
        logits = h[:n] + h[n:]
        gate = stable_sigmoid(logits)
        self.last_gate = gate.reshape(n, self.channels, 1, 1)
        self._cache = (x, self.last_gate)
        return x * self.last_gate

    def backward(self, dout):
        x, gate = self._cache
        n = x.shape[0]
        dx = dout * gate
        dgate = (dout * x).sum(axis=(2, 3))
        g2 = gate.reshape(n, self.channels)
        dlogits = dgate * g2 * (1.0 - g2)
        ddesc = self.fc1.backward(self.relu.backward(
            self.fc2.backward(np.concatenate([dlogits, dlogits], axis=0))))
        dx += self.avg_pool.backward(ddesc[:n].reshape(n, self.channels, 1, 1))
        dx += self.max_pool.backward(ddesc[n:].reshape(n, self.channels, 1, 1))
        return dx


class SpatialAttention(Layer):
    """Per-location sigmoid gate from channel-pooled maps through a conv."""

    def __init__(self, kernel_size: int = 7,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.kernel_size = kernel_size
        self.conv = Conv2d(2, 1, kernel_size, padding=kernel_size // 2,
                           dtype=dtype, rng=rng)
        self.last_gate = None
        self._cache = None

    def children(self):
        return [("conv", self.conv)]

    def forward(self, x, train=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"expected (N, C, H, W), got {x.shape}")
        c = x.shape[1]
        mean_c = x.mean(axis=1, keepdims=True)
        arg = np.argmax(x, axis=1)  # first max wins on ties
        max_c = np.take_along_axis(x, arg[:, None], axis=1)
        pooled = np.concatenate([mean_c, max_c], axis=1)
        logits = self.conv.forward(pooled, train)
        gate = stable_sigmoid(logits)
        self.last_gate = gate
        self._cache = (x, arg, gate)
        return x * gate

    def backward(self, dout):
        x, arg, gate = self._cache
        c = x.shape[1]
        dx = dout * gate
        dgate = (dout * x).sum(axis=1, keepdims=True)
        dlogits = dgate * gate * (1.0 - gate)
        dpooled = self.conv.backward(dlogits)
        dx += dpooled[:, 0:1] / c
        dmax = np.zeros_like(x)
        np.put_along_axis(dmax, arg[:, None], dpooled[:, 1:2], axis=1)
        return dx + dmax


class Cbam(Layer):
    """Channel and spatial gates applied sequentially."""

    def __init__(self, channels: int, reduction: int = 16, kernel_size: int = 7,
                 order: str = "cam_then_sam", residual: bool = False,
                 dtype=np.float32, rng: np.random.Generator | None = None):
        super().__init__()
        if order not in CBAM_ORDERS:
            raise ValueError(f"unknown CBAM order {order!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.order = order
        self.residual = residual
        self.cam = ChannelAttention(channels, reduction, dtype=dtype, rng=rng)
        self.sam = SpatialAttention(kernel_size, dtype=dtype, rng=rng)

    def children(self):
        return [("cam", self.cam), ("sam", self.sam)]

    def forward(self, x, train=False):
        first, second = ((self.cam, self.sam) if self.order == "cam_then_sam"
                         else (self.sam, self.cam))
        out = second.forward(first.forward(x, train), train)
        return x + out if self.residual else out

    def backward(self, dout):
        first, second = ((self.cam, self.sam) if self.order == "cam_then_sam"
                         else (self.sam, self.cam))
        dx = first.backward(second.backward(dout))
        return dx + dout if self.residual else dx
