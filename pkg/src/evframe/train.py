"""Seeded training (Adam + cross-entropy) and top-1 evaluation.

A dataset is a pair ``(x, y)``: inputs of shape (N, C, H, W), or
(N, T, C, H, W) for per-frame scoring, and integer labels of shape (N,).

Determinism contract: the shuffle for epoch e is drawn from
``np.random.default_rng([seed, e])``, so curves are bit-identical across
runs of the same configuration and a resumed run shuffles exactly like
an uninterrupted one. Wall-clock stamps come from an injectable timer;
pass a constant function to make the metrics log byte-identical too.

The per-epoch training accuracy in the log is measured by a clean
inference pass over the training split after the epoch's updates, so it
matches a later evaluation of the saved checkpoint exactly.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field as dataclass_field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import EmptyDataset, InvalidConfig, ShapeMismatch
from .model import VggCbam, config_digest
from .nn.layers import load_state, named_grads, named_params, state_dict, zero_grads
from .nn.loss import softmax_cross_entropy
from .optim import AdamHyper, AdamState, adam_init, adam_step

Dataset = Tuple[np.ndarray, np.ndarray]

PRECISIONS = ("float32", "float64")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    precision: str = "float32"

    def __post_init__(self):
        if self.lr < 0:
            raise InvalidConfig("lr must be >= 0", field="lr")
        if not (0.0 <= self.beta1 < 1.0):
            raise InvalidConfig("beta1 must lie in [0, 1)", field="beta1")
        if not (0.0 <= self.beta2 < 1.0):
            raise InvalidConfig("beta2 must lie in [0, 1)", field="beta2")
        if self.eps <= 0:
            raise InvalidConfig("eps must be > 0", field="eps")
        if self.batch_size < 1:
            raise InvalidConfig("batch_size must be >= 1", field="batch_size")
        if self.epochs < 0:
            raise InvalidConfig("epochs must be >= 0", field="epochs")
        if self.seed < 0:
            raise InvalidConfig("seed must be >= 0", field="seed")
        if self.precision not in PRECISIONS:
            raise InvalidConfig(f"precision must be one of {PRECISIONS}",
                                field="precision")

    def hyper(self) -> AdamHyper:
        return AdamHyper(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                         eps=self.eps)

    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == "float32" else np.float64)


@dataclass
class TrainState:
    epoch: int = 0
    step: int = 0
    best_metric: float = float("-inf")
    adam: AdamState = dataclass_field(default_factory=AdamState)
    history: List[Dict[str, float]] = dataclass_field(default_factory=list)


def _check_dataset(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    x, y = dataset
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch(f"inputs {x.shape} do not pair with labels {y.shape}")
    if y.shape[0] == 0:
        raise EmptyDataset("dataset holds no samples")
    return x, y


def _forward_metrics(model: VggCbam, x: np.ndarray, y: np.ndarray,
                     batch_size: int) -> Tuple[float, float, np.ndarray]:
    """Inference pass: (mean loss, top-1 accuracy, confusion matrix)."""
    k = model.config.num_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    loss_sum = 0.0
    correct = 0
    n = x.shape[0]
    for lo in range(0, n, batch_size):
        xb = x[lo:lo + batch_size]
        yb = y[lo:lo + batch_size]
        logits = model.forward(xb, train=False)
        loss, _ = softmax_cross_entropy(logits, yb)
        loss_sum += loss * len(yb)
        pred = np.argmax(logits, axis=1)
        correct += int(np.sum(pred == yb))
        np.add.at(confusion, (yb, pred), 1)
    return loss_sum / n, correct / n, confusion


def evaluate(model: VggCbam, dataset: Dataset,
             batch_size: int = 256) -> Tuple[float, np.ndarray]:
    """Top-1 accuracy and confusion matrix (rows true, columns predicted).

    Prediction is the argmax over logits; ties resolve to the lowest
    class index.
    """
    x, y = _check_dataset(dataset)
    _, acc, confusion = _forward_metrics(model, x, y, batch_size)
    return acc, confusion


def split_by_class(labels: Sequence[int], fraction: float = 0.9,
                   seed: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Deterministic per-class split into (train indices, held-out indices).

    Each class is permuted by its own seeded generator and cut at
    floor(fraction * n), clamped so both sides of a class with at least
    2 samples stay non-empty. Index arrays come back sorted.
    """
    if not (0.0 < fraction < 1.0):
        raise InvalidConfig("fraction must lie strictly between 0 and 1",
                            field="split_fraction")
    y = np.asarray(labels, dtype=np.int64)
    train_idx: List[np.ndarray] = []
    held_idx: List[np.ndarray] = []
    for cls in np.unique(y):
        idx = np.flatnonzero(y == cls)
        rng = np.random.default_rng([seed, int(cls)])
        perm = idx[rng.permutation(len(idx))]
        cut = int(fraction * len(idx))
        if len(idx) >= 2:
            cut = min(max(cut, 1), len(idx) - 1)
        train_idx.append(perm[:cut])
        held_idx.append(perm[cut:])
    return (np.sort(np.concatenate(train_idx)),
            np.sort(np.concatenate(held_idx)))


def format_record(epoch: int, split: str, loss: float, top1: float,
                  wall_time_s: float) -> str:
    return (f"epoch={epoch} split={split} loss={loss:.6f} "
            f"top1={top1:.6f} wall_time_s={wall_time_s:.6f}")


def _trainer_entries(model: VggCbam, state: TrainState) -> Dict[str, np.ndarray]:
    entries = state_dict(model)
    for name, m in state.adam.m.items():
        entries[f"adam.m.{name}"] = m
    for name, v in state.adam.v.items():
        entries[f"adam.v.{name}"] = v
    entries["trainer.step"] = np.array(state.step, dtype=np.int64)
    entries["trainer.epoch"] = np.array(state.epoch, dtype=np.int64)
    entries["trainer.best_metric"] = np.array(state.best_metric, dtype=np.float64)
    return entries


def save_train_checkpoint(path: str, model: VggCbam, state: TrainState) -> None:
    save_checkpoint(path, config_digest(model.config),
                    _trainer_entries(model, state))


def load_train_checkpoint(path: str, model: VggCbam) -> TrainState:
    """Restore weights, buffers and optimizer state saved for this config."""
    _, entries = load_checkpoint(path, expect_digest=config_digest(model.config))
    model_part = {k: v for k, v in entries.items() if not k.startswith(("adam.", "trainer."))}
    load_state(model, model_part)
    state = TrainState(adam=adam_init(dict(named_params(model))))
    for name in state.adam.m:
        key_m, key_v = f"adam.m.{name}", f"adam.v.{name}"
        if key_m in entries:
            if entries[key_m].shape != state.adam.m[name].shape:
                raise ShapeMismatch(f"moment {key_m} has shape {entries[key_m].shape}")
            state.adam.m[name] = entries[key_m].astype(state.adam.m[name].dtype, copy=True)
            state.adam.v[name] = entries[key_v].astype(state.adam.v[name].dtype, copy=True)
    state.step = int(entries.get("trainer.step", np.int64(0)))
    state.adam.step = state.step
    state.epoch = int(entries.get("trainer.epoch", np.int64(0)))
    state.best_metric = float(entries.get("trainer.best_metric",
                                          np.float64(float("-inf"))))
    return state


def train(model: VggCbam, train_set: Dataset, config: TrainConfig, *,
          val_set: Optional[Dataset] = None,
          out_dir: Optional[str] = None,
          state: Optional[TrainState] = None,
          timer: Optional[Callable[[], float]] = None,
          log_sink: Optional[Callable[[str], None]] = None) -> TrainState:
    """Run (or resume) the full loop; returns the final TrainState.

    When out_dir is given, every epoch rewrites last.ckpt, improvements
    of the monitored metric (held-out accuracy if val_set is given, else
    training accuracy) rewrite best.ckpt, and metric records append to
    metrics.log. log_sink receives each record line as well.
    """
    x, y = _check_dataset(train_set)
    dtype = config.dtype()
    x = np.ascontiguousarray(x, dtype=dtype)
    val = None
    if val_set is not None:
        vx, vy = _check_dataset(val_set)
        val = (np.ascontiguousarray(vx, dtype=dtype), vy)
    if timer is None:
        timer = time.perf_counter
    params = dict(named_params(model))
    grads = dict(named_grads(model))
    if state is None:
        state = TrainState(adam=adam_init(params))
    hyper = config.hyper()
    n = x.shape[0]

    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if state.epoch > 0 else "w"
        log_file = open(os.path.join(out_dir, "metrics.log"), mode)

    def emit(line: str) -> None:
        if log_file is not None:
            log_file.write(line + "\n")
            log_file.flush()
        if log_sink is not None:
            log_sink(line)

    t0 = timer()
    try:
        for epoch in range(state.epoch, config.epochs):
            rng = np.random.default_rng([config.seed, epoch])
            perm = rng.permutation(n)
            loss_sum = 0.0
            for lo in range(0, n, config.batch_size):
                idx = perm[lo:lo + config.batch_size]
                zero_grads(model)
                logits = model.forward(x[idx], train=True)
                loss, dlogits = softmax_cross_entropy(logits, y[idx])
                model.backward(dlogits)
                adam_step(params, grads, state.adam, hyper)
                state.step += 1
                loss_sum += loss * len(idx)
            train_loss = loss_sum / n
            _, train_acc, _ = _forward_metrics(model, x, y, config.batch_size)
            wall = timer() - t0
            emit(format_record(epoch + 1, "train", train_loss, train_acc, wall))
            record = {"epoch": epoch + 1, "train_loss": train_loss,
                      "train_top1": train_acc, "wall_time_s": wall}
            monitored = train_acc
            if val is not None:
                val_loss, val_acc, _ = _forward_metrics(model, *val, config.batch_size)
                wall = timer() - t0
                emit(format_record(epoch + 1, "val", val_loss, val_acc, wall))
                record["val_loss"] = val_loss
                record["val_top1"] = val_acc
                monitored = val_acc
            state.epoch = epoch + 1
            state.history.append(record)
            improved = monitored > state.best_metric
            if improved:
                state.best_metric = monitored
            if out_dir is not None:
                save_train_checkpoint(os.path.join(out_dir, "last.ckpt"), model, state)
                if improved:
                    save_train_checkpoint(os.path.join(out_dir, "best.ckpt"), model, state)
    finally:
        if log_file is not None:
            log_file.close()
    return state
