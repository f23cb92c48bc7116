"""Exception types shared across the package.

Every error raised by evframe derives from EvframeError so callers can
catch the whole family. Decode errors carry the byte offset of the fault
where one is meaningful.
"""

from __future__ import annotations


class EvframeError(Exception):
    """Base class for all evframe errors."""


# --- event model ---

class NonMonotonicTimestamps(EvframeError):
    def __init__(self, index: int):
        self.index = index
        super().__init__(f"timestamp decreases at event index {index}")


class OutOfBounds(EvframeError):
    def __init__(self, index: int, x: int, y: int):
        self.index = index
        self.x = x
        self.y = y
        super().__init__(f"event {index} at ({x}, {y}) outside sensor geometry")


class EmptyStream(EvframeError):
    def __init__(self, msg: str = "stream contains no events"):
        super().__init__(msg)


# --- codec ---

class TruncatedRecord(EvframeError):
    def __init__(self, msg: str, offset: int | None = None):
        self.offset = offset
        super().__init__(msg if offset is None else f"{msg} (byte offset {offset})")


class MalformedHeader(EvframeError):
    def __init__(self, msg: str, offset: int | None = None):
        self.offset = offset
        super().__init__(msg if offset is None else f"{msg} (byte offset {offset})")


class BadMagic(EvframeError):
    def __init__(self, expected: bytes, got: bytes):
        self.expected = expected
        self.got = got
        super().__init__(f"bad magic: expected {expected!r}, got {got!r}")


class UnsupportedVersion(EvframeError):
    def __init__(self, version):
        self.version = version
        super().__init__(f"unsupported format version: {version}")


class CountMismatch(EvframeError):
    def __init__(self, declared: int, actual: int):
        self.declared = declared
        self.actual = actual
        super().__init__(f"header declares {declared} events, payload holds {actual}")


# --- representation ---

class TooFewEvents(EvframeError):
    def __init__(self, n: int, t: int):
        self.n = n
        self.t = t
        super().__init__(f"cannot slice {n} events into {t} non-empty slices")


# --- tensor / nn ---

class ShapeMismatch(EvframeError):
    pass


class DegenerateBatch(EvframeError):
    pass


class LabelOutOfRange(EvframeError):
    def __init__(self, label: int, num_classes: int):
        self.label = label
        self.num_classes = num_classes
        super().__init__(f"label {label} outside [0, {num_classes})")


# --- model / training / cli ---

class InvalidConfig(EvframeError):
    def __init__(self, msg: str, field: str | None = None):
        self.field = field
        super().__init__(msg if field is None else f"{field}: {msg}")


class EmptyDataset(EvframeError):
    def __init__(self, msg: str = "dataset contains no samples"):
        super().__init__(msg)


class ConfigDigestMismatch(EvframeError):
    def __init__(self, expected: str, got: str):
        self.expected = expected
        self.got = got
        super().__init__(
            f"checkpoint was trained with a different model config "
            f"(digest {expected[:12]} != {got[:12]})"
        )
