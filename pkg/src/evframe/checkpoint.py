"""Binary checkpoint files: named little-endian arrays plus a config digest.

Layout (all integers little-endian):

  bytes 0..7    magic "EVCKPT01"
  bytes 8..71   model-config digest, 64 ASCII hex characters
  bytes 72..75  u32 entry count
  entries       u16 name length, name UTF-8,
                u8 dtype-string length, dtype string (numpy form, e.g. "<f4"),
                u8 ndim, ndim x u32 dims,
                raw array payload

Round-trips are bit-exact: loading returns arrays with identical bytes,
shapes and dtypes. The digest pins the checkpoint to one model
configuration; loaders compare it before touching any weights.
"""

from __future__ import annotations

import struct
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import (BadMagic, ConfigDigestMismatch, MalformedHeader,
                     TruncatedRecord)

CHECKPOINT_MAGIC = b"EVCKPT01"
_COUNT = struct.Struct("<I")
_NAME_LEN = struct.Struct("<H")
_U8 = struct.Struct("<B")
_DIM = struct.Struct("<I")


def encode_checkpoint(digest: str, entries: Dict[str, np.ndarray]) -> bytes:
    if len(digest) != 64 or any(ch not in "0123456789abcdef" for ch in digest):
        raise ValueError("digest must be 64 lowercase hex characters")
    parts = [CHECKPOINT_MAGIC, digest.encode("ascii"), _COUNT.pack(len(entries))]
    for name, arr in entries.items():
        arr = np.asarray(arr)
        # ascontiguousarray would promote 0-dim arrays to 1-dim, so only
        # copy when the layout actually needs it.
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        name_b = name.encode("utf-8")
        dtype_b = arr.dtype.str.encode("ascii")
        parts.append(_NAME_LEN.pack(len(name_b)))
        parts.append(name_b)
        parts.append(_U8.pack(len(dtype_b)))
        parts.append(dtype_b)
        parts.append(_U8.pack(arr.ndim))
        for dim in arr.shape:
            parts.append(_DIM.pack(dim))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> Tuple[str, Dict[str, np.ndarray]]:
    if len(data) < len(CHECKPOINT_MAGIC):
        raise TruncatedRecord("file shorter than checkpoint magic", offset=len(data))
    magic = data[:8]
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(CHECKPOINT_MAGIC, magic)
    if len(data) < 72 + _COUNT.size:
        raise TruncatedRecord("file shorter than checkpoint header", offset=len(data))
    digest_b = data[8:72]
    try:
        digest = digest_b.decode("ascii")
    except UnicodeDecodeError:
        raise MalformedHeader("digest is not ASCII", offset=8)
    if any(ch not in "0123456789abcdef" for ch in digest):
        raise MalformedHeader("digest is not lowercase hex", offset=8)
    (count,) = _COUNT.unpack_from(data, 72)
    offset = 72 + _COUNT.size
    entries: Dict[str, np.ndarray] = {}

    def need(n: int, what: str) -> None:
        if offset + n > len(data):
            raise TruncatedRecord(f"checkpoint ends inside {what}", offset=offset)

    for _ in range(count):
        need(_NAME_LEN.size, "entry name length")
        (name_len,) = _NAME_LEN.unpack_from(data, offset)
        offset += _NAME_LEN.size
        need(name_len, "entry name")
        name = data[offset:offset + name_len].decode("utf-8")
        offset += name_len
        need(_U8.size, "dtype length")
        (dtype_len,) = _U8.unpack_from(data, offset)
        offset += _U8.size
        need(dtype_len, "dtype string")
        try:
            dtype = np.dtype(data[offset:offset + dtype_len].decode("ascii"))
        except (TypeError, UnicodeDecodeError) as exc:
            raise MalformedHeader(f"bad dtype string for {name!r}: {exc}", offset=offset)
        offset += dtype_len
        need(_U8.size, "rank")
        (ndim,) = _U8.unpack_from(data, offset)
        offset += _U8.size
        shape = []
        for _ in range(ndim):
            need(_DIM.size, "shape")
            (dim,) = _DIM.unpack_from(data, offset)
            shape.append(dim)
            offset += _DIM.size
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        need(nbytes, f"payload of {name!r}")
        arr = np.frombuffer(data[offset:offset + nbytes], dtype=dtype).reshape(shape).copy()
        offset += nbytes
        entries[name] = arr
    if offset != len(data):
        raise TruncatedRecord("trailing bytes after last entry", offset=offset)
    return digest, entries


def save_checkpoint(path: str, digest: str, entries: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(encode_checkpoint(digest, entries))


def load_checkpoint(path: str,
                    expect_digest: Optional[str] = None) -> Tuple[str, Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        digest, entries = decode_checkpoint(f.read())
    if expect_digest is not None and digest != expect_digest:
        raise ConfigDigestMismatch(expect_digest, digest)
    return digest, entries
