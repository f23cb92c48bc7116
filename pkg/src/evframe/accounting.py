"""Analytic parameter and FLOP accounting for built networks.

Cost model (one forward pass, batch size 1, one multiply-accumulate
counted as 2 FLOPs):

  conv KxK, C_in -> C_out, output H'xW'   2*C_out*C_in*K*K*H'*W' (+ C_out*H'*W' bias adds)
  linear F_in -> F_out                    2*F_in*F_out (+ F_out bias adds)
  batchnorm (inference form)              2 per element (scale, shift)
  relu / sigmoid                          1 per element
  max pool KxK                            K*K per output element
  global average pool                     1 add per element + 1 divide per channel
  global max pool                         1 compare per element
  channel attention                       both global pools + shared MLP on the
                                          2 descriptors + path sum + sigmoid
                                          + 1 multiply per element
  spatial attention                       channel mean (1 add/element + 1 divide
                                          per pixel) + channel max + the KxK conv
                                          on the 2-channel map + sigmoid + 1
                                          multiply per element
  flatten / reshape                       0

Bias adds are included whenever the layer owns a bias vector. Pooled
5-D inputs cost one forward per frame; report numbers here are per
single 4-D input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .attention import Cbam, ChannelAttention, SpatialAttention
from .errors import ShapeMismatch
from .nn.layers import (BatchNorm2d, Conv2d, Flatten, GlobalAvgPool,
                        GlobalMaxPool, Layer, Linear, MaxPool2d, ReLU,
                        Sequential, Sigmoid, conv_output_size)


@dataclass(frozen=True)
class LayerProfile:
    """One table row: a leaf layer's cost and its output shape."""
    name: str
    kind: str
    out_shape: Tuple[int, ...]
    params: int
    flops: int


def _own_params(layer: Layer) -> int:
    total = sum(int(np.prod(p.shape)) for p in layer.params.values())
    for _, child in layer.children():
        total += _own_params(child)
    return total


def count_params(model: Layer) -> int:
    """Exact number of trainable scalar parameters in the layer tree."""
    return _own_params(model)


def _elems(shape: Sequence[int]) -> int:
    return int(np.prod(shape))


def _cam_flops(layer: ChannelAttention, shape: Tuple[int, ...]) -> int:
    c, h, w = shape
    hid = layer.fc1.out_features
    flops = c * h * w + c          # global average pool
    flops += c * h * w             # global max pool
    flops += 2 * (2 * c * hid + hid)   # fc1 on both descriptors
    flops += 2 * hid               # relu
    flops += 2 * (2 * hid * c + c)     # fc2 on both descriptors
    flops += c                     # sum the two paths
    flops += c                     # sigmoid
    flops += c * h * w             # apply the gate
    return flops


def _sam_flops(layer: SpatialAttention, shape: Tuple[int, ...]) -> int:
    c, h, w = shape
    k = layer.conv.kernel_size
    flops = c * h * w + h * w      # channel mean
    flops += c * h * w             # channel max
    flops += 2 * 1 * 2 * k * k * h * w + h * w   # conv on the 2-channel map
    flops += h * w                 # sigmoid
    flops += c * h * w             # apply the gate
    return flops


def _visit(name: str, layer: Layer, shape: Tuple[int, ...],
           rows: List[LayerProfile]) -> Tuple[int, ...]:
    def emit(kind: str, out_shape: Tuple[int, ...], flops: int) -> Tuple[int, ...]:
        rows.append(LayerProfile(name=name, kind=kind, out_shape=out_shape,
                                 params=_own_params(layer), flops=int(flops)))
        return out_shape

    if isinstance(layer, Sequential):
        for child_name, child in layer.children():
            shape = _visit(f"{name}.{child_name}" if name else child_name,
                           child, shape, rows)
        return shape
    if isinstance(layer, Cbam):
        for child_name, child in layer.children():
            shape = _visit(f"{name}.{child_name}", child, shape, rows)
        if layer.residual:
            rows.append(LayerProfile(name=f"{name}.residual", kind="add",
                                     out_shape=shape, params=0,
                                     flops=_elems(shape)))
        return shape
    if isinstance(layer, Conv2d):
        c, h, w = shape
        if c != layer.in_channels:
            raise ShapeMismatch(f"{name}: expected {layer.in_channels} channels, got {c}")
        oh = conv_output_size(h, layer.kernel_size, layer.stride, layer.padding)
        ow = conv_output_size(w, layer.kernel_size, layer.stride, layer.padding)
        k = layer.kernel_size
        flops = 2 * layer.out_channels * c * k * k * oh * ow
        if "bias" in layer.params:
            flops += layer.out_channels * oh * ow
        return emit("conv", (layer.out_channels, oh, ow), flops)
    if isinstance(layer, Linear):
        (f_in,) = shape
        if f_in != layer.in_features:
            raise ShapeMismatch(f"{name}: expected {layer.in_features} features, got {f_in}")
        flops = 2 * layer.in_features * layer.out_features
        if "bias" in layer.params:
            flops += layer.out_features
        return emit("linear", (layer.out_features,), flops)
    if isinstance(layer, BatchNorm2d):
        return emit("batchnorm", shape, 2 * _elems(shape))
    if isinstance(layer, ReLU):
        return emit("relu", shape, _elems(shape))
    if isinstance(layer, Sigmoid):
        return emit("sigmoid", shape, _elems(shape))
    if isinstance(layer, MaxPool2d):
        c, h, w = shape
        k, s = layer.kernel_size, layer.stride
        oh = (h - k) // s + 1
        ow = (w - k) // s + 1
        return emit("maxpool", (c, oh, ow), k * k * c * oh * ow)
    if isinstance(layer, GlobalAvgPool):
        c = shape[0]
        return emit("gap", (c, 1, 1), _elems(shape) + c)
    if isinstance(layer, GlobalMaxPool):
        c = shape[0]
        return emit("gmp", (c, 1, 1), _elems(shape))
    if isinstance(layer, Flatten):
        return emit("flatten", (_elems(shape),), 0)
    if isinstance(layer, ChannelAttention):
        return emit("cam", shape, _cam_flops(layer, shape))
    if isinstance(layer, SpatialAttention):
        return emit("sam", shape, _sam_flops(layer, shape))
    if layer.children():
        for child_name, child in layer.children():
            shape = _visit(f"{name}.{child_name}" if name else child_name,
                           child, shape, rows)
        return shape
    raise TypeError(f"no cost model for layer type {type(layer).__name__}")


def _resolve_input_shape(model: Layer,
                         input_shape: Optional[Sequence[int]]) -> Tuple[int, ...]:
    if input_shape is not None:
        return tuple(int(v) for v in input_shape)
    config = getattr(model, "config", None)
    if config is None:
        raise ValueError("input_shape is required for bare layers")
    return (config.input_channels,) + tuple(config.input_size)


def profile_model(model: Layer,
                  input_shape: Optional[Sequence[int]] = None) -> List[LayerProfile]:
    """Per-layer table of parameters and forward FLOPs for one input."""
    rows: List[LayerProfile] = []
    _visit("", model, _resolve_input_shape(model, input_shape), rows)
    return rows


def total_flops(model: Layer, input_shape: Optional[Sequence[int]] = None) -> int:
    return sum(row.flops for row in profile_model(model, input_shape))


def count_flops(model: Layer, input_shape: Optional[Sequence[int]] = None) -> float:
    """Forward cost in MFLOPs (1e6 FLOPs) for a single input."""
    return total_flops(model, input_shape) / 1e6


def format_profile(rows: List[LayerProfile]) -> str:
    header = f"{'layer':<28} {'kind':<10} {'output':<16} {'params':>12} {'flops':>16}"
    lines = [header, "-" * len(header)]
    for row in rows:
        shape = "x".join(str(v) for v in row.out_shape)
        lines.append(f"{row.name:<28} {row.kind:<10} {shape:<16} "
                     f"{row.params:>12,} {row.flops:>16,}")
    params = sum(r.params for r in rows)
    flops = sum(r.flops for r in rows)
    lines.append("-" * len(header))
    lines.append(f"{'total':<28} {'':<10} {'':<16} {params:>12,} {flops:>16,}")
    lines.append(f"total parameters: {params:,}")
    lines.append(f"total forward cost: {flops:,} FLOPs = {flops / 1e6:.3f} MFLOPs")
    return "\n".join(lines)


def delta_report(model_a: Layer, model_b: Layer,
                 label_a: str = "baseline", label_b: str = "ours",
                 input_shape_a: Optional[Sequence[int]] = None,
                 input_shape_b: Optional[Sequence[int]] = None) -> str:
    """Side-by-side per-layer comparison of two built models.

    Rows are aligned by layer name; a dash marks a layer present in only
    one of the two networks. Ends with absolute and relative totals so
    budget claims can be audited under the documented cost model.
    """
    rows_a = {r.name: r for r in profile_model(model_a, input_shape_a)}
    rows_b = {r.name: r for r in profile_model(model_b, input_shape_b)}
    order = list(rows_a)
    order.extend(n for n in rows_b if n not in rows_a)
    header = (f"{'layer':<28} {label_a + ' params':>16} {label_b + ' params':>16} "
              f"{label_a + ' flops':>18} {label_b + ' flops':>18}")
    lines = [header, "-" * len(header)]

    def cell(value: Optional[int]) -> str:
        return f"{value:,}" if value is not None else "-"

    for name in order:
        a, b = rows_a.get(name), rows_b.get(name)
        lines.append(f"{name:<28} "
                     f"{cell(a.params if a else None):>16} "
                     f"{cell(b.params if b else None):>16} "
                     f"{cell(a.flops if a else None):>18} "
                     f"{cell(b.flops if b else None):>18}")
    pa = sum(r.params for r in rows_a.values())
    pb = sum(r.params for r in rows_b.values())
    fa = sum(r.flops for r in rows_a.values())
    fb = sum(r.flops for r in rows_b.values())
    lines.append("-" * len(header))
    lines.append(f"{'total':<28} {pa:>16,} {pb:>16,} {fa:>18,} {fb:>18,}")
    lines.append(f"parameter change {label_a} -> {label_b}: {pb - pa:+,} "
                 f"({(pb - pa) / pa * 100.0:+.2f}%)" if pa else
                 f"parameter change {label_a} -> {label_b}: {pb - pa:+,}")
    lines.append(f"flop change {label_a} -> {label_b}: {fb - fa:+,} "
                 f"({(fb - fa) / fa * 100.0:+.2f}%, "
                 f"{(fb - fa) / 1e6:+.3f} MFLOPs)" if fa else
                 f"flop change {label_a} -> {label_b}: {fb - fa:+,}")
    return "\n".join(lines)
