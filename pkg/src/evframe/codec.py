"""Binary decoders for neuromorphic dataset formats plus a lossless
portable interchange format.

Supported inputs:

* ATIS ``.bin`` (N-Caltech101 carrier): 5-byte records
  ``byte0 = x``, ``byte1 = y``, ``byte2 bit 7 = polarity``, remaining 23
  bits (byte2 bits 6..0, byte3, byte4, big-endian) = timestamp in us.
* AEDAT 2.0 ``.aedat`` (CIFAR10-DVS carrier): optional ``#``-prefixed
  ASCII header lines, then 8-byte big-endian records (u32 address,
  u32 timestamp us) with DVS128 addressing
  ``x = (addr >> 1) & 0x7F``, ``y = (addr >> 8) & 0x7F``, ``p = addr & 1``.
* Portable ``.evt``: header ``magic "EVSTRM01", version u16, width u16,
  height u16, label i32 (-1 = absent), count u64`` followed by
  little-endian records ``(x u16, y u16, p u8, t u64)``. Lossless.

Raw source timestamps are narrower than 64 bits; whenever a raw timestamp
decreases relative to its predecessor one full period of the source width
is added (2^23 us for ATIS, 2^32 us for AEDAT 2.0), so downstream code
never sees wraparound. Decoders validate before returning: they either
produce a valid stream or raise.
"""

from __future__ import annotations

import os
import struct
from typing import List, Optional, Tuple

import numpy as np

from .errors import (
    BadMagic,
    CountMismatch,
    MalformedHeader,
    TruncatedRecord,
    UnsupportedVersion,
)
from .events import EVENT_DTYPE, EventStream, SensorGeometry, stream_from_arrays, validate_stream

ATIS_RECORD_SIZE = 5
ATIS_TIMESTAMP_PERIOD_US = 1 << 23

AEDAT2_RECORD_SIZE = 8
AEDAT2_TIMESTAMP_PERIOD_US = 1 << 32
AEDAT2_GEOMETRY = SensorGeometry(128, 128)

PORTABLE_MAGIC = b"EVSTRM01"
PORTABLE_VERSION = 1
_PORTABLE_HEADER = struct.Struct("<8sHHHiQ")
_PORTABLE_RECORD_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("t", "<u8")])


def unwrap_timestamps(raw: np.ndarray, period: int) -> np.ndarray:
    """Lift raw (possibly wrapped) timestamps into monotone int64 us.

    Each decrease in the raw sequence is treated as one rollover of the
    source counter and adds `period`.
    """
    raw = np.asarray(raw, dtype=np.int64)
    if raw.size < 2:
        return raw.copy()
    wraps = np.concatenate(([0], np.cumsum(np.diff(raw) < 0)))
    return raw + wraps * period


def decode_atis_bin(data: bytes, geometry: SensorGeometry,
                    label: Optional[int] = None) -> EventStream:
    """Decode ATIS 5-byte records into a validated EventStream."""
    if len(data) % ATIS_RECORD_SIZE != 0:
        raise TruncatedRecord(
            f"ATIS payload of {len(data)} bytes is not a multiple of {ATIS_RECORD_SIZE}",
            offset=(len(data) // ATIS_RECORD_SIZE) * ATIS_RECORD_SIZE,
        )
    rec = np.frombuffer(data, dtype=np.uint8).reshape(-1, ATIS_RECORD_SIZE).astype(np.int64)
    x = rec[:, 0]
    y = rec[:, 1]
    p = rec[:, 2] >> 7
    raw_t = ((rec[:, 2] & 0x7F) << 16) | (rec[:, 3] << 8) | rec[:, 4]
    t = unwrap_timestamps(raw_t, ATIS_TIMESTAMP_PERIOD_US)
    return validate_stream(stream_from_arrays(x, y, t, p, geometry, label))


def decode_aedat2(data: bytes, label: Optional[int] = None) -> EventStream:
    """Decode an AEDAT 2.0 DVS128 byte sequence into a validated EventStream.

    Header lines starting with '#' are read until the first non-'#' byte;
    a '#!AER-DAT' version line other than 2.x raises UnsupportedVersion.
    """
    offset = 0
    version_seen = None
    while offset < len(data) and data[offset:offset + 1] == b"#":
        end = data.find(b"\n", offset)
        if end < 0:
            raise MalformedHeader("header line not terminated before end of file",
                                  offset=offset)
        line = data[offset:end].rstrip(b"\r")
        if line.startswith(b"#!AER-DAT"):
            version_seen = line[len(b"#!AER-DAT"):].decode("ascii", "replace")
            if not version_seen.startswith("2."):
                raise UnsupportedVersion(f"AER-DAT{version_seen}")
        offset = end + 1

    payload = len(data) - offset
    if payload % AEDAT2_RECORD_SIZE != 0:
        raise TruncatedRecord(
            f"AEDAT2 payload of {payload} bytes is not a multiple of {AEDAT2_RECORD_SIZE}",
            offset=offset + (payload // AEDAT2_RECORD_SIZE) * AEDAT2_RECORD_SIZE,
        )
    words = np.frombuffer(data, dtype=">u4", offset=offset).reshape(-1, 2)
    addr = words[:, 0].astype(np.int64)
    raw_t = words[:, 1].astype(np.int64)
    x = (addr >> 1) & 0x7F
    y = (addr >> 8) & 0x7F
    p = addr & 0x1
    t = unwrap_timestamps(raw_t, AEDAT2_TIMESTAMP_PERIOD_US)
    return validate_stream(stream_from_arrays(x, y, t, p, AEDAT2_GEOMETRY, label))


def encode_portable(stream: EventStream) -> bytes:
    """Serialize a validated stream to the portable .evt format (lossless)."""
    header = _PORTABLE_HEADER.pack(
        PORTABLE_MAGIC,
        PORTABLE_VERSION,
        stream.geometry.width,
        stream.geometry.height,
        -1 if stream.label is None else stream.label,
        len(stream),
    )
    rec = np.empty(len(stream), dtype=_PORTABLE_RECORD_DTYPE)
    ev = stream.events
    rec["x"] = ev["x"]
    rec["y"] = ev["y"]
    rec["p"] = ev["p"]
    rec["t"] = ev["t"].astype(np.uint64)
    return header + rec.tobytes()


def decode_portable(data: bytes) -> EventStream:
    """Inverse of encode_portable."""
    if len(data) < _PORTABLE_HEADER.size:
        raise TruncatedRecord("file shorter than portable header", offset=len(data))
    magic, version, width, height, label, count = _PORTABLE_HEADER.unpack_from(data)
    if magic != PORTABLE_MAGIC:
        raise BadMagic(PORTABLE_MAGIC, magic)
    if version != PORTABLE_VERSION:
        raise UnsupportedVersion(version)
    payload = len(data) - _PORTABLE_HEADER.size
    if payload % _PORTABLE_RECORD_DTYPE.itemsize != 0:
        raise TruncatedRecord(
            f"portable payload of {payload} bytes is not a multiple of "
            f"{_PORTABLE_RECORD_DTYPE.itemsize}",
            offset=len(data) - payload % _PORTABLE_RECORD_DTYPE.itemsize,
        )
    rec = np.frombuffer(data, dtype=_PORTABLE_RECORD_DTYPE, offset=_PORTABLE_HEADER.size)
    if len(rec) != count:
        raise CountMismatch(count, len(rec))
    stream = stream_from_arrays(
        rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"],
        SensorGeometry(width, height),
        None if label < 0 else label,
    )
    return validate_stream(stream)


def flip_polarity(stream: EventStream) -> EventStream:
    """Swap ON and OFF channels (some CIFAR10-DVS tools remap polarity)."""
    ev = stream.events.copy()
    ev["p"] = 1 - ev["p"]
    return EventStream(ev, stream.geometry, stream.label)


# --- file-level helpers -------------------------------------------------

FORMAT_EXTENSIONS = {
    "atis-bin": ".bin",
    "aedat2": ".aedat",
    "evt": ".evt",
}


def decode_file(path: str, fmt: str, geometry: Optional[SensorGeometry] = None,
                label: Optional[int] = None) -> EventStream:
    """Decode one file by format name ('atis-bin', 'aedat2', 'evt')."""
    with open(path, "rb") as f:
        data = f.read()
    if fmt == "atis-bin":
        if geometry is None:
            raise ValueError("atis-bin decoding requires an explicit geometry")
        return decode_atis_bin(data, geometry, label)
    if fmt == "aedat2":
        return decode_aedat2(data, label)
    if fmt == "evt":
        stream = decode_portable(data)
        if label is not None and stream.label is None:
            stream = EventStream(stream.events, stream.geometry, label)
        return stream
    raise ValueError(f"unknown format: {fmt!r}")


def scan_dataset(root: str, extension: str) -> Tuple[List[Tuple[str, int, str]], List[str]]:
    """List samples under `<root>/<class_name>/<sample><extension>`.

    Class label = index of the class directory name in sorted order, which
    makes labels reproducible across machines. Returns (samples, classes)
    where samples are (path, label, class_name) sorted by class then name.
    """
    classes = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    samples = []
    for label, cls in enumerate(classes):
        cls_dir = os.path.join(root, cls)
        for name in sorted(os.listdir(cls_dir)):
            if name.endswith(extension):
                samples.append((os.path.join(cls_dir, name), label, cls))
    return samples, classes
