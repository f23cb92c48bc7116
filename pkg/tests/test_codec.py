"""Binary decoders: timestamp unwrap, ATIS .bin, AEDAT 2.0, portable .evt."""

import struct

import numpy as np
import pytest

from evframe.codec import (AEDAT2_TIMESTAMP_PERIOD_US, ATIS_TIMESTAMP_PERIOD_US,
                           PORTABLE_MAGIC, decode_aedat2, decode_atis_bin,
                           decode_file, decode_portable, encode_portable,
                           flip_polarity, scan_dataset, unwrap_timestamps)
from evframe.errors import (BadMagic, CountMismatch, MalformedHeader,
                            OutOfBounds, TruncatedRecord, UnsupportedVersion)
from evframe.events import Event, SensorGeometry, stream_from_arrays


def unwrap_oracle(raw, period):
    """Scalar reference: add one period on every decrease, accumulating."""
    out = []
    carry = 0
    prev = None
    for value in raw:
        if prev is not None and value < prev:
            carry += period
        out.append(value + carry)
        prev = value
    return out


def atis_record(x, y, p, t):
    """Pack one 5-byte ATIS record: x, y, polarity bit 7, 23-bit BE timestamp."""
    assert 0 <= t < (1 << 23)
    return bytes([x, y, (p << 7) | ((t >> 16) & 0x7F), (t >> 8) & 0xFF, t & 0xFF])


def aedat2_record(x, y, p, t):
    """Pack one 8-byte AEDAT 2.0 record: BE u32 DVS128 address, BE u32 timestamp."""
    assert 0 <= t < (1 << 32)
    addr = (y << 8) | (x << 1) | p
    return struct.pack(">II", addr, t)


def random_stream(rng, n, width=48, height=32, label=None, t_max=1_000_000):
    """Valid random stream: sorted timestamps, in-bounds coordinates."""
    x = rng.integers(0, width, size=n)
    y = rng.integers(0, height, size=n)
    t = np.sort(rng.integers(0, t_max, size=n))
    p = rng.integers(0, 2, size=n)
    return stream_from_arrays(x, y, t, p, SensorGeometry(width, height), label)


class TestUnwrapTimestamps:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scalar_oracle(self, seed):
        rng = np.random.default_rng(seed)
        raw = rng.integers(0, 1 << 23, size=500)
        got = unwrap_timestamps(raw, 1 << 23)
        np.testing.assert_array_equal(got, unwrap_oracle(raw.tolist(), 1 << 23))

    def test_monotone_input_unchanged(self):
        raw = np.array([0, 5, 5, 9, 100])
        np.testing.assert_array_equal(unwrap_timestamps(raw, 1 << 23), raw)

    def test_each_decrease_adds_one_period(self):
        period = 1 << 23
        raw = np.array([10, 3, 2, 7])
        expected = np.array([10, 3 + period, 2 + 2 * period, 7 + 2 * period])
        np.testing.assert_array_equal(unwrap_timestamps(raw, period), expected)

    def test_empty_and_single(self):
        np.testing.assert_array_equal(unwrap_timestamps(np.array([], dtype=np.int64), 8), [])
        np.testing.assert_array_equal(unwrap_timestamps(np.array([42]), 8), [42])

    def test_returns_int64_copy(self):
        raw = np.array([3, 1], dtype=np.uint32)
        out = unwrap_timestamps(raw, 16)
        assert out.dtype == np.int64
        out[0] = 99
        assert raw[0] == 3


class TestAtisDecode:
    GEOM = SensorGeometry(256, 256)

    def test_known_bytes(self):
        s = decode_atis_bin(bytes([0x03, 0x04, 0x80, 0x00, 0x0A]), self.GEOM)
        assert len(s) == 1
        assert s[0] == Event(3, 4, 10, 1)

    def test_polarity_bit_clear(self):
        s = decode_atis_bin(atis_record(7, 2, 0, 300), self.GEOM)
        assert s[0] == Event(7, 2, 300, 0)

    def test_timestamp_uses_all_23_bits(self):
        t = (1 << 23) - 1
        s = decode_atis_bin(atis_record(0, 0, 1, t), self.GEOM)
        assert s[0].t == t

    def test_rollover_adds_period(self):
        data = atis_record(1, 1, 0, (1 << 23) - 2) + atis_record(1, 1, 0, 5)
        s = decode_atis_bin(data, self.GEOM)
        assert s[1].t == 5 + ATIS_TIMESTAMP_PERIOD_US

    def test_empty_payload_gives_empty_stream(self):
        assert len(decode_atis_bin(b"", self.GEOM)) == 0

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_random_records(self, seed):
        rng = np.random.default_rng(seed)
        n = 200
        x = rng.integers(0, 256, size=n)
        y = rng.integers(0, 256, size=n)
        p = rng.integers(0, 2, size=n)
        t = np.sort(rng.integers(0, 1 << 23, size=n))
        data = b"".join(atis_record(*rec) for rec in zip(x, y, p, t))
        s = decode_atis_bin(data, self.GEOM, label=3)
        np.testing.assert_array_equal(s.events["x"], x)
        np.testing.assert_array_equal(s.events["y"], y)
        np.testing.assert_array_equal(s.events["p"], p)
        np.testing.assert_array_equal(s.events["t"], t)
        assert s.label == 3

    def test_truncated_payload(self):
        data = atis_record(1, 1, 0, 10) + b"\x01\x02"
        with pytest.raises(TruncatedRecord) as err:
            decode_atis_bin(data, self.GEOM)
        assert err.value.offset == 5

    def test_out_of_bounds_coordinate_rejected(self):
        with pytest.raises(OutOfBounds):
            decode_atis_bin(atis_record(40, 2, 0, 1), SensorGeometry(32, 32))


class TestAedat2Decode:
    def test_known_record(self):
        s = decode_aedat2(aedat2_record(5, 9, 1, 42))
        assert len(s) == 1
        assert s[0] == Event(5, 9, 42, 1)
        assert s.geometry == SensorGeometry(128, 128)

    def test_address_fields_are_masked(self):
        addr = (1 << 31) | (9 << 8) | (5 << 1) | 0
        s = decode_aedat2(struct.pack(">II", addr, 7))
        assert s[0] == Event(5, 9, 7, 0)

    def test_header_lines_skipped(self):
        data = (b"#!AER-DAT2.0\r\n# comment line\n"
                + aedat2_record(1, 2, 0, 9))
        s = decode_aedat2(data)
        assert s[0] == Event(1, 2, 9, 0)

    def test_headerless_payload_accepted(self):
        assert len(decode_aedat2(aedat2_record(0, 0, 0, 0))) == 1

    def test_header_only_gives_empty_stream(self):
        assert len(decode_aedat2(b"#!AER-DAT2.0\n")) == 0

    def test_wrong_version_rejected(self):
        with pytest.raises(UnsupportedVersion):
            decode_aedat2(b"#!AER-DAT3.1\n" + aedat2_record(0, 0, 0, 0))

    def test_unterminated_header_line(self):
        with pytest.raises(MalformedHeader) as err:
            decode_aedat2(b"# no newline at all")
        assert err.value.offset == 0

    def test_truncated_payload(self):
        data = b"#header\n" + aedat2_record(1, 1, 1, 1) + b"\x00\x01\x02"
        with pytest.raises(TruncatedRecord) as err:
            decode_aedat2(data)
        assert err.value.offset == len(b"#header\n") + 8

    def test_rollover_adds_period(self):
        data = aedat2_record(0, 0, 0, (1 << 32) - 1) + aedat2_record(0, 0, 0, 3)
        s = decode_aedat2(data)
        assert s[1].t == 3 + AEDAT2_TIMESTAMP_PERIOD_US

    @pytest.mark.parametrize("seed", range(5))
    def test_round_trip_random_records(self, seed):
        rng = np.random.default_rng(seed)
        n = 200
        x = rng.integers(0, 128, size=n)
        y = rng.integers(0, 128, size=n)
        p = rng.integers(0, 2, size=n)
        t = np.sort(rng.integers(0, 1 << 31, size=n))
        data = b"".join(aedat2_record(*rec) for rec in zip(x, y, p, t))
        s = decode_aedat2(data)
        np.testing.assert_array_equal(s.events["x"], x)
        np.testing.assert_array_equal(s.events["y"], y)
        np.testing.assert_array_equal(s.events["p"], p)
        np.testing.assert_array_equal(s.events["t"], t)


class TestPortableRoundTrip:
    @pytest.mark.parametrize("seed", range(10))
    def test_encode_decode_is_identity(self, seed):
        rng = np.random.default_rng(seed)
        s = random_stream(rng, int(rng.integers(1, 400)), label=int(seed % 3))
        back = decode_portable(encode_portable(s))
        np.testing.assert_array_equal(back.events, s.events)
        assert back.geometry == s.geometry
        assert back.label == s.label

    def test_label_absent_round_trips_as_none(self):
        rng = np.random.default_rng(0)
        s = random_stream(rng, 10, label=None)
        assert decode_portable(encode_portable(s)).label is None

    def test_empty_stream_round_trips(self):
        s = stream_from_arrays([], [], [], [], SensorGeometry(16, 16))
        back = decode_portable(encode_portable(s))
        assert len(back) == 0
        assert back.geometry == SensorGeometry(16, 16)

    def test_large_timestamps_survive(self):
        t = [1 << 52, (1 << 52) + 3]
        s = stream_from_arrays([0, 1], [0, 1], t, [0, 1], SensorGeometry(4, 4))
        back = decode_portable(encode_portable(s))
        np.testing.assert_array_equal(back.events["t"], t)

    def test_record_layout_is_13_bytes_little_endian(self):
        s = stream_from_arrays([0x0102], [0x0304], [0x05], [1],
                               SensorGeometry(0x0103, 0x0305))
        data = encode_portable(s)
        record = data[len(data) - 13:]
        assert record == bytes([0x02, 0x01, 0x04, 0x03, 0x01,
                                0x05, 0, 0, 0, 0, 0, 0, 0])


class TestPortableErrors:
    def make_valid(self, n=4):
        rng = np.random.default_rng(1)
        return encode_portable(random_stream(rng, n))

    def test_bad_magic(self):
        data = b"NOTMAGIC" + self.make_valid()[8:]
        with pytest.raises(BadMagic) as err:
            decode_portable(data)
        assert err.value.expected == PORTABLE_MAGIC
        assert err.value.got == b"NOTMAGIC"

    def test_unsupported_version(self):
        data = bytearray(self.make_valid())
        data[8:10] = struct.pack("<H", 2)
        with pytest.raises(UnsupportedVersion) as err:
            decode_portable(bytes(data))
        assert err.value.version == 2

    def test_short_header(self):
        with pytest.raises(TruncatedRecord):
            decode_portable(b"EVSTRM01\x01")

    def test_truncated_record_tail(self):
        with pytest.raises(TruncatedRecord):
            decode_portable(self.make_valid() + b"\x00\x01")

    def test_count_mismatch(self):
        full = self.make_valid(n=5)
        with pytest.raises(CountMismatch) as err:
            decode_portable(full[:-13])
        assert err.value.declared == 5
        assert err.value.actual == 4


class TestFlipPolarity:
    def test_swaps_channels(self):
        rng = np.random.default_rng(2)
        s = random_stream(rng, 64, label=1)
        flipped = flip_polarity(s)
        np.testing.assert_array_equal(flipped.events["p"], 1 - s.events["p"])
        np.testing.assert_array_equal(flipped.events["x"], s.events["x"])
        np.testing.assert_array_equal(flipped.events["t"], s.events["t"])
        assert flipped.geometry == s.geometry
        assert flipped.label == s.label

    def test_original_untouched_and_involution(self):
        rng = np.random.default_rng(3)
        s = random_stream(rng, 32)
        before = s.events["p"].copy()
        twice = flip_polarity(flip_polarity(s))
        np.testing.assert_array_equal(s.events["p"], before)
        np.testing.assert_array_equal(twice.events, s.events)


class TestDecodeFile:
    def test_dispatch_by_format(self, tmp_path):
        rng = np.random.default_rng(4)
        s = random_stream(rng, 20, width=64, height=64)

        evt = tmp_path / "a.evt"
        evt.write_bytes(encode_portable(s))
        assert len(decode_file(str(evt), "evt")) == 20

        bin_path = tmp_path / "b.bin"
        bin_path.write_bytes(atis_record(1, 2, 1, 3))
        decoded = decode_file(str(bin_path), "atis-bin", SensorGeometry(8, 8))
        assert decoded[0] == Event(1, 2, 3, 1)

        aedat = tmp_path / "c.aedat"
        aedat.write_bytes(aedat2_record(1, 2, 1, 3))
        assert decode_file(str(aedat), "aedat2")[0] == Event(1, 2, 3, 1)

    def test_atis_requires_geometry(self, tmp_path):
        path = tmp_path / "x.bin"
        path.write_bytes(atis_record(0, 0, 0, 0))
        with pytest.raises(ValueError):
            decode_file(str(path), "atis-bin")

    def test_unknown_format(self, tmp_path):
        path = tmp_path / "x.dat"
        path.write_bytes(b"")
        with pytest.raises(ValueError):
            decode_file(str(path), "raw")

    def test_evt_label_override_only_fills_missing(self, tmp_path):
        rng = np.random.default_rng(5)
        unlabeled = tmp_path / "u.evt"
        unlabeled.write_bytes(encode_portable(random_stream(rng, 5, label=None)))
        assert decode_file(str(unlabeled), "evt", label=7).label == 7

        labeled = tmp_path / "l.evt"
        labeled.write_bytes(encode_portable(random_stream(rng, 5, label=2)))
        assert decode_file(str(labeled), "evt", label=7).label == 2


class TestScanDataset:
    def test_sorted_classes_and_samples(self, tmp_path):
        for cls in ("walk", "run", "jump"):
            (tmp_path / cls).mkdir()
        (tmp_path / "run" / "b.evt").write_bytes(b"")
        (tmp_path / "run" / "a.evt").write_bytes(b"")
        (tmp_path / "jump" / "only.evt").write_bytes(b"")
        (tmp_path / "walk" / "skipped.txt").write_bytes(b"")
        (tmp_path / "stray.evt").write_bytes(b"")

        samples, classes = scan_dataset(str(tmp_path), ".evt")
        assert classes == ["jump", "run", "walk"]
        names = [(label, path.rsplit("/", 1)[-1]) for path, label, _ in samples]
        assert names == [(0, "only.evt"), (1, "a.evt"), (1, "b.evt")]
        assert all(cls == classes[label] for _, label, cls in samples)
