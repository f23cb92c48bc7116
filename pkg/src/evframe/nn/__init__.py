"""From-scratch tensor kernels: layers, loss, and the gradient checker."""

from .gradcheck import finite_difference_check
from .layers import (
    BatchNorm2d,
    Conv2d,
    Flatten,
    GlobalAvgPool,
    GlobalMaxPool,
    Layer,
    Linear,
    MaxPool2d,
    ReLU,
    Sequential,
    Sigmoid,
    debug_finite_checks,
    load_state,
    named_buffers,
    named_grads,
    named_params,
    state_dict,
    zero_grads,
)
from .loss import softmax, softmax_cross_entropy

__all__ = [
    "BatchNorm2d",
    "Conv2d",
    "Flatten",
    "GlobalAvgPool",
    "GlobalMaxPool",
    "Layer",
    "Linear",
    "MaxPool2d",
    "ReLU",
    "Sequential",
    "Sigmoid",
    "debug_finite_checks",
    "finite_difference_check",
    "load_state",
    "named_buffers",
    "named_grads",
    "named_params",
    "softmax",
    "softmax_cross_entropy",
    "state_dict",
    "zero_grads",
]
