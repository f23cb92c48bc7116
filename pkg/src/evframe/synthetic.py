"""Synthetic moving-bar event streams for demos and smoke tests.

A vertical bar sweeps across the sensor once: the leading edge
brightens pixels (ON events), the trailing edge darkens them (OFF
events). Direction is the only class signal, so a left/right dataset is
cleanly separable from the spatiotemporal structure yet every single
frame looks similar, which is exactly what a temporal representation
should be able to pick up.
"""

from __future__ import annotations

import os
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .codec import encode_portable
from .events import EventStream, SensorGeometry, stream_from_arrays, validate_stream

CLASS_DIRECTIONS = (("left", -1), ("right", 1))


def bar_stream(direction: int, geometry: Tuple[int, int] = (32, 32),
               events_per_step: int = 96, duration_us: int = 64_000,
               seed: Sequence[int] | int = 0,
               label: Optional[int] = None) -> EventStream:
    """One sweep of a vertical bar; direction +1 moves right, -1 left.

    The sweep advances one column per time step. Each step emits
    events_per_step ON events on the leading column and, once the bar
    has moved, the same number of OFF events on the trailing column,
    at random rows and times within the step.
    """
    if direction not in (-1, 1):
        raise ValueError("direction must be -1 or +1")
    h, w = geometry
    step_us = max(1, duration_us // w)
    rng = np.random.default_rng(seed)
    xs: List[np.ndarray] = []
    ys: List[np.ndarray] = []
    ts: List[np.ndarray] = []
    ps: List[np.ndarray] = []
    for s in range(w):
        lead = s if direction > 0 else w - 1 - s
        trail = lead - direction
        cols = [np.full(events_per_step, lead)]
        pols = [np.ones(events_per_step, dtype=np.int64)]
        if 0 <= trail < w:
            cols.append(np.full(events_per_step, trail))
            pols.append(np.zeros(events_per_step, dtype=np.int64))
        col = np.concatenate(cols)
        pol = np.concatenate(pols)
        order = rng.permutation(col.size)
        col, pol = col[order], pol[order]
        row = rng.integers(0, h, size=col.size)
        t = np.sort(rng.integers(0, step_us, size=col.size)) + s * step_us
        xs.append(col)
        ys.append(row)
        ts.append(t)
        ps.append(pol)
    stream = stream_from_arrays(
        np.concatenate(xs), np.concatenate(ys), np.concatenate(ts),
        np.concatenate(ps), SensorGeometry(width=w, height=h), label)
    return validate_stream(stream)


def make_bar_dataset(out_dir: str, n_per_class: int = 32,
                     geometry: Tuple[int, int] = (32, 32),
                     events_per_step: int = 96, duration_us: int = 64_000,
                     seed: int = 0) -> Tuple[List[str], List[str]]:
    """Write a left/right .evt dataset under out_dir; returns (paths, classes).

    Layout is `<out_dir>/<class>/<class>_<index>.evt`, matching what the
    converter scans. Every stream gets its own child seed, so the whole
    dataset is reproducible from one integer.
    """
    paths: List[str] = []
    classes: List[str] = []
    for ci, (name, direction) in enumerate(sorted(CLASS_DIRECTIONS)):
        classes.append(name)
        class_dir = os.path.join(out_dir, name)
        os.makedirs(class_dir, exist_ok=True)
        for i in range(n_per_class):
            stream = bar_stream(direction, geometry=geometry,
                                events_per_step=events_per_step,
                                duration_us=duration_us,
                                seed=[seed, ci, i], label=ci)
            path = os.path.join(class_dir, f"{name}_{i:03d}.evt")
            with open(path, "wb") as f:
                f.write(encode_portable(stream))
            paths.append(path)
    return paths, classes
