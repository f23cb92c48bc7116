"""Adam optimizer over named parameter dictionaries.

Standard update with bias correction:

  m <- b1*m + (1-b1)*g          mhat = m / (1 - b1^t)
  v <- b2*v + (1-b2)*g^2        vhat = v / (1 - b2^t)
  p <- p - lr * mhat / (sqrt(vhat) + eps)

Moments live in plain dicts keyed like the parameters, so the whole
optimizer state serializes through the same named-array checkpoint
table as the model weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .errors import InvalidConfig, ShapeMismatch


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidConfig("lr must be >= 0", field="lr")
        if not (0.0 <= self.beta1 < 1.0):
            raise InvalidConfig("beta1 must lie in [0, 1)", field="beta1")
        if not (0.0 <= self.beta2 < 1.0):
            raise InvalidConfig("beta2 must lie in [0, 1)", field="beta2")
        if self.eps <= 0:
            raise InvalidConfig("eps must be > 0", field="eps")


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_init(params: Dict[str, np.ndarray]) -> AdamState:
    """Zero moments shaped like every parameter."""
    return AdamState(
        step=0,
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, hyper: AdamHyper) -> AdamState:
    """Apply one update in place; returns the (mutated) state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ShapeMismatch("params, grads and moments must share the same keys")
    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ShapeMismatch(
                f"{name}: parameter {p.shape}, gradient {g.shape}, "
                f"moment {state.m[name].shape}")
        m = state.m[name]
        v = state.v[name]
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * np.square(g)
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return state
