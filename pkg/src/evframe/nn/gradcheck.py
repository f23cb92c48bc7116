"""Central finite-difference checker for layer backward passes.

The scalar objective is sum(forward(x) * R) for a fixed random weighting
R, so its analytic input gradient is backward(R) and its parameter
gradients land in the layer's grads dict. Each coordinate of the input
and of every parameter is then perturbed by +-eps and the analytic value
compared against the central difference:

    rel_err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)

Run in double precision; eps defaults to 1e-5.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Layer, named_grads, named_params, zero_grads


def _relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def finite_difference_check(layer: Layer, x: np.ndarray, *, eps: float = 1e-5,
                            train: bool = False, seed: int = 0,
                            check_input: bool = True,
                            check_params: bool = True) -> float:
    """Max relative error between analytic and numeric gradients."""
    rng = np.random.default_rng(seed)
    y0 = layer.forward(x, train=train)
    r = rng.standard_normal(y0.shape)

    def objective() -> float:
        return float((layer.forward(x, train=train) * r).sum())

    zero_grads(layer)
    layer.forward(x, train=train)
    dx = layer.backward(r.astype(x.dtype))
    analytic_params = {name: g.copy() for name, g in named_grads(layer)}

    worst = 0.0
    if check_input:
        worst = max(worst, _sweep(objective, x, dx, eps))
    if check_params:
        params = dict(named_params(layer))
        for name, arr in params.items():
            worst = max(worst, _sweep(objective, arr, analytic_params[name], eps))
    return worst


def _sweep(objective: Callable[[], float], arr: np.ndarray,
           analytic: np.ndarray, eps: float) -> float:
    worst = 0.0
    flat = arr.reshape(-1)
    aflat = analytic.reshape(-1)
    writeable = flat.flags.writeable
    flat.flags.writeable = True
    try:
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            plus = objective()
            flat[i] = orig - eps
            minus = objective()
            flat[i] = orig
            numeric = (plus - minus) / (2 * eps)
            worst = max(worst, _relative_error(float(aflat[i]), numeric))
    finally:
        flat.flags.writeable = writeable
    return worst
