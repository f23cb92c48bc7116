"""Softmax cross-entropy, numerically stabilized by max subtraction."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..errors import LabelOutOfRange, ShapeMismatch


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean negative log-likelihood over the batch and its logit gradient.

    Returns (loss, grad) with grad = (softmax - onehot) / N, so the caller
    feeds grad straight into the model's backward pass.
    """
    if logits.ndim != 2:
        raise ShapeMismatch(f"logits must be (N, K), got {logits.shape}")
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatch(f"labels must be ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        bad = labels[(labels < 0) | (labels >= k)][0]
        raise LabelOutOfRange(int(bad), k)
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(logsumexp - shifted[np.arange(n), labels]))
    grad = softmax(logits)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
