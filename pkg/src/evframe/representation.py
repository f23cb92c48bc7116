"""Fixed-count slicing and two-channel frame integration.

A stream of N events is cut into T segments of floor(N/T) events each;
segment n covers the half-open index interval [floor(N/T)*n,
floor(N/T)*(n+1)). Half-open intervals partition exactly, so per-slice
counts add up to the number of covered events. Two slice modes:

* ``strict_paper``      - exactly the boundary formula; the trailing
                          N mod T events are dropped.
* ``remainder_to_last`` - same boundaries, but the final right edge is
                          moved to N so no event is lost (default).

Each slice is integrated into a 2-channel count image: entry
(n, p, x, y) is the number of slice-n events with that polarity and
pixel. Counts accumulate in integer arithmetic and are cast to float
only by temporal_reduce.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .errors import BadMagic, ShapeMismatch, TooFewEvents, TruncatedRecord
from .events import EventStream, SensorGeometry

SLICE_MODES = ("strict_paper", "remainder_to_last")
REDUCE_MODES = ("mean", "sum", "stack")
NORMALIZE_MODES = ("none", "per_sample_max", "log1p")


@dataclass(frozen=True)
class SliceSpec:
    T: int
    mode: str
    boundaries: Tuple[Tuple[int, int], ...]


def slice_by_count(n_events: int, T: int, mode: str = "remainder_to_last") -> SliceSpec:
    """Compute the T half-open index intervals for a stream of n_events."""
    if mode not in SLICE_MODES:
        raise ValueError(f"unknown slice mode {mode!r}")
    if T < 1:
        raise ValueError(f"slice count must be >= 1, got {T}")
    if n_events < T:
        raise TooFewEvents(n_events, T)
    width = n_events // T
    boundaries = [(width * n, width * (n + 1)) for n in range(T)]
    if mode == "remainder_to_last":
        boundaries[-1] = (boundaries[-1][0], n_events)
    return SliceSpec(T=T, mode=mode, boundaries=tuple(boundaries))


@dataclass(frozen=True)
class FrameTensor:
    """T x 2 x H x W integer event counts for one stream."""

    data: np.ndarray
    geometry: SensorGeometry

    def __post_init__(self):
        if self.data.ndim != 4 or self.data.shape[1] != 2:
            raise ShapeMismatch(f"frame tensor must be (T, 2, H, W), got {self.data.shape}")

    @property
    def T(self) -> int:
        return self.data.shape[0]


def integrate_frames(stream: EventStream, spec: SliceSpec) -> FrameTensor:
    """Count events per (slice, polarity, pixel) over the slice intervals."""
    h, w = stream.geometry.height, stream.geometry.width
    ev = stream.events
    out = np.zeros((spec.T, 2, h, w), dtype=np.int64)
    cells = 2 * h * w
    for n, (lo, hi) in enumerate(spec.boundaries):
        flat = (ev["p"][lo:hi].astype(np.int64) * h + ev["y"][lo:hi]) * w + ev["x"][lo:hi]
        out[n] = np.bincount(flat, minlength=cells).reshape(2, h, w)
    return FrameTensor(out, stream.geometry)


def temporal_reduce(frames: FrameTensor, mode: str = "mean") -> np.ndarray:
    """Collapse the slice axis into network input (float64).

    mean/sum give a (2, H, W) tensor; stack concatenates slices
    channel-wise (slice-major: [s0p0, s0p1, s1p0, ...]) into (2T, H, W).
    """
    data = frames.data.astype(np.float64)
    if mode == "mean":
        return data.mean(axis=0)
    if mode == "sum":
        return data.sum(axis=0)
    if mode == "stack":
        t, c, h, w = data.shape
        return data.reshape(t * c, h, w)
    raise ValueError(f"unknown reduce mode {mode!r}")


def normalize_input(x: np.ndarray, mode: str = "per_sample_max") -> np.ndarray:
    """Normalize non-negative inputs; all modes keep an all-zero tensor zero."""
    if mode == "none":
        return x
    if mode == "per_sample_max":
        peak = x.max()
        return x / peak if peak > 0 else x
    if mode == "log1p":
        return np.log1p(x)
    raise ValueError(f"unknown normalize mode {mode!r}")


# --- frame cache file (.frm) --------------------------------------------
#
# Layout: magic "EVFRAM01", then little-endian u32 T, C, H, W, u8 dtype
# tag, then the row-major payload. Caches hold raw integer counts; the
# reduce/normalize steps run at load time so one cache serves any mode.

FRAME_MAGIC = b"EVFRAM01"
_FRAME_HEADER = struct.Struct("<8sIIIIB")
_DTYPE_TAGS = {1: np.dtype("<u2"), 2: np.dtype("<u4")}
_TAG_FOR_DTYPE = {v: k for k, v in _DTYPE_TAGS.items()}


def encode_frames(frames: FrameTensor) -> bytes:
    t, c, h, w = frames.data.shape
    peak = int(frames.data.max()) if frames.data.size else 0
    if int(frames.data.min() if frames.data.size else 0) < 0:
        raise ValueError("frame counts must be non-negative")
    if peak >= 2 ** 32:
        raise ValueError("frame counts exceed the u32 cache range")
    dtype = np.dtype("<u2") if peak < 2 ** 16 else np.dtype("<u4")
    payload = frames.data.astype(dtype)
    header = _FRAME_HEADER.pack(FRAME_MAGIC, t, c, h, w, _TAG_FOR_DTYPE[dtype])
    return header + payload.tobytes()


def decode_frames(data: bytes) -> FrameTensor:
    if len(data) < _FRAME_HEADER.size:
        raise TruncatedRecord("file shorter than frame header", offset=len(data))
    magic, t, c, h, w, tag = _FRAME_HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise BadMagic(FRAME_MAGIC, magic)
    if tag not in _DTYPE_TAGS:
        raise TruncatedRecord(f"unknown dtype tag {tag}", offset=_FRAME_HEADER.size - 1)
    dtype = _DTYPE_TAGS[tag]
    expected = t * c * h * w * dtype.itemsize
    payload = data[_FRAME_HEADER.size:]
    if len(payload) != expected:
        raise TruncatedRecord(
            f"frame payload holds {len(payload)} bytes, header implies {expected}",
            offset=_FRAME_HEADER.size + min(len(payload), expected),
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(t, c, h, w).astype(np.int64)
    return FrameTensor(arr, SensorGeometry(w, h))


def write_frames(path: str, frames: FrameTensor) -> None:
    with open(path, "wb") as f:
        f.write(encode_frames(frames))


def read_frames(path: str) -> FrameTensor:
    with open(path, "rb") as f:
        return decode_frames(f.read())
