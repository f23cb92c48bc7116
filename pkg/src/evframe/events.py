"""Canonical in-memory event stream representation.

An event is the quadruple (x, y, t, p): pixel column/row, microsecond
timestamp, and polarity (0 = OFF/brightness decrease, 1 = ON/increase).
Streams store events in a structured numpy array so that million-event
recordings stay cheap; timestamps are int64 microseconds and must be
non-decreasing (equal timestamps are allowed, decoder order is kept).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import EmptyStream, NonMonotonicTimestamps, OutOfBounds

# Column layout shared by every producer in the package. 'p' indexes the
# polarity channel in the frame representation, hence {0, 1} not {-1, +1}.
EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<i8"), ("p", "<u1")])


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"geometry must be at least 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True)
class EventStream:
    """Ordered event sequence with sensor geometry and an optional label.

    Immutable after construction; the backing array is set read-only so a
    stream can be shared across threads. Construction does not validate —
    call validate_stream (decoders do it for you).
    """

    events: np.ndarray
    geometry: SensorGeometry
    label: Optional[int] = None

    def __post_init__(self):
        arr = np.asarray(self.events)
        if arr.dtype != EVENT_DTYPE:
            arr = arr.astype(EVENT_DTYPE)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "events", arr)
        if self.label is not None and self.label < 0:
            raise ValueError(f"label must be >= 0, got {self.label}")

    def __len__(self) -> int:
        return len(self.events)

    def __getitem__(self, i: int) -> Event:
        r = self.events[i]
        return Event(int(r["x"]), int(r["y"]), int(r["t"]), int(r["p"]))

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]


def stream_from_arrays(x, y, t, p, geometry: SensorGeometry,
                       label: Optional[int] = None) -> EventStream:
    """Assemble an EventStream from parallel coordinate arrays."""
    n = len(x)
    arr = np.empty(n, dtype=EVENT_DTYPE)
    arr["x"] = np.asarray(x, dtype=np.uint16)
    arr["y"] = np.asarray(y, dtype=np.uint16)
    arr["t"] = np.asarray(t, dtype=np.int64)
    arr["p"] = np.asarray(p, dtype=np.uint8)
    return EventStream(arr, geometry, label)


def stream_from_events(events: Sequence[Event], geometry: SensorGeometry,
                       label: Optional[int] = None) -> EventStream:
    """Assemble an EventStream from scalar Event objects (test helper)."""
    arr = np.array([(e.x, e.y, e.t, e.p) for e in events], dtype=EVENT_DTYPE)
    return EventStream(arr, geometry, label)


@dataclass(frozen=True)
class StreamStats:
    count: int
    duration_us: int
    on_count: int
    off_count: int
    x_min: int
    x_max: int
    y_min: int
    y_max: int


def validate_stream(stream: EventStream) -> EventStream:
    """Check ordering and geometry invariants; return the stream unchanged.

    Raises NonMonotonicTimestamps at the first index whose timestamp
    decreases, or OutOfBounds at the first event outside the geometry.
    Idempotent: a validated stream always validates again.
    """
    ev = stream.events
    if len(ev) > 1:
        t = ev["t"]
        dec = np.nonzero(t[1:] < t[:-1])[0]
        if dec.size:
            raise NonMonotonicTimestamps(int(dec[0]) + 1)
    if len(ev):
        bad = np.nonzero((ev["x"] >= stream.geometry.width)
                         | (ev["y"] >= stream.geometry.height))[0]
        if bad.size:
            i = int(bad[0])
            raise OutOfBounds(i, int(ev["x"][i]), int(ev["y"][i]))
        badp = np.nonzero(ev["p"] > 1)[0]
        if badp.size:
            raise ValueError(f"polarity must be 0 or 1 at index {int(badp[0])}")
    return stream


def stream_stats(stream: EventStream) -> StreamStats:
    """Exact counts and extrema over a validated stream."""
    ev = stream.events
    if len(ev) == 0:
        raise EmptyStream()
    on = int(np.count_nonzero(ev["p"]))
    return StreamStats(
        count=len(ev),
        duration_us=int(ev["t"][-1]) - int(ev["t"][0]),
        on_count=on,
        off_count=len(ev) - on,
        x_min=int(ev["x"].min()),
        x_max=int(ev["x"].max()),
        y_min=int(ev["y"].min()),
        y_max=int(ev["y"].max()),
    )


def concat_streams(a: EventStream, b: EventStream) -> EventStream:
    """Concatenate two streams over the same geometry, a's events first.

    The result is valid whenever both inputs are valid and b starts no
    earlier than a ends.
    """
    if a.geometry != b.geometry:
        raise ValueError("cannot concatenate streams with different geometries")
    label = a.label if a.label == b.label else None
    return EventStream(np.concatenate([a.events, b.events]), a.geometry, label)
