"""Dataset conversion to cached frame files, and loading them for training.

A converted dataset directory mirrors the class layout of the raw one:

  cache/
    manifest.json
    <class>/<sample>.frm

Each .frm holds the raw integer count tensor (T, 2, H, W) for one
stream; temporal reduction and normalization are cheap and lossy, so
they happen at load time and the manifest only records the defaults
chosen at conversion. manifest.json carries the class list, per-sample
stats and any per-file failures, making partial conversions visible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .codec import FORMAT_EXTENSIONS, decode_file, flip_polarity, scan_dataset
from .errors import EmptyDataset, EvframeError, ShapeMismatch
from .events import SensorGeometry, stream_stats
from .representation import (NORMALIZE_MODES, SLICE_MODES, integrate_frames,
                             normalize_input, read_frames, slice_by_count,
                             temporal_reduce, write_frames)

MANIFEST_NAME = "manifest.json"


@dataclass
class ConvertResult:
    out_dir: str
    converted: List[str] = field(default_factory=list)
    failures: List[Tuple[str, str]] = field(default_factory=list)
    manifest: Dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def _convert_one(path: str, fmt: str, out_path: str, slices: int,
                 slice_mode: str, geometry: Optional[SensorGeometry],
                 label: Optional[int], flip: bool) -> Dict:
    stream = decode_file(path, fmt, geometry=geometry, label=label)
    if flip:
        stream = flip_polarity(stream)
    spec = slice_by_count(len(stream), slices, slice_mode)
    frames = integrate_frames(stream, spec)
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    write_frames(out_path, frames)
    stats = stream_stats(stream)
    return {
        "events": stats.count,
        "duration_us": stats.duration_us,
        "on": stats.on_count,
        "off": stats.off_count,
        "geometry": [stream.geometry.height, stream.geometry.width],
    }


def convert_dataset(root: str, fmt: str, out_dir: str, slices: int,
                    slice_mode: str = "remainder_to_last",
                    geometry: Optional[SensorGeometry] = None,
                    reduce: str = "mean",
                    normalize: str = "none",
                    flip: bool = False) -> ConvertResult:
    """Convert every `<root>/<class>/<sample>` file into a cached .frm.

    Per-file decode or slicing errors are collected, not fatal: the
    result lists them and the manifest marks the run as partial.
    """
    if slice_mode not in SLICE_MODES:
        raise ValueError(f"unknown slice mode {slice_mode!r}")
    if normalize not in NORMALIZE_MODES:
        raise ValueError(f"unknown normalize mode {normalize!r}")
    extension = FORMAT_EXTENSIONS[fmt]
    samples, classes = scan_dataset(root, extension)
    if not samples:
        raise EmptyDataset(f"no *{extension} files under {root!r}")
    result = ConvertResult(out_dir=out_dir)
    os.makedirs(out_dir, exist_ok=True)
    sample_records = []
    cache_geometry: Optional[List[int]] = None
    for path, label, cls in samples:
        stem = os.path.splitext(os.path.basename(path))[0]
        rel = os.path.join(cls, stem + ".frm")
        out_path = os.path.join(out_dir, rel)
        try:
            info = _convert_one(path, fmt, out_path, slices, slice_mode,
                                geometry, label, flip)
            if cache_geometry is None:
                cache_geometry = info["geometry"]
            elif info["geometry"] != cache_geometry:
                raise ShapeMismatch(
                    f"stream geometry {info['geometry']} differs from "
                    f"the dataset's {cache_geometry}")
        except (EvframeError, ValueError, OSError) as exc:
            result.failures.append((path, f"{type(exc).__name__}: {exc}"))
            if os.path.exists(out_path):
                os.remove(out_path)
            continue
        record = {"path": rel.replace(os.sep, "/"), "label": label, "class": cls}
        record.update(info)
        sample_records.append(record)
        result.converted.append(out_path)
    result.manifest = {
        "format": fmt,
        "slices": slices,
        "slice_mode": slice_mode,
        "reduce": reduce,
        "normalize": normalize,
        "flip_polarity": flip,
        "geometry": cache_geometry,
        "classes": classes,
        "samples": sample_records,
        "failures": [{"path": p, "error": e} for p, e in result.failures],
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(result.manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return result


def convert_file(path: str, fmt: str, out_dir: str, slices: int,
                 slice_mode: str = "remainder_to_last",
                 geometry: Optional[SensorGeometry] = None,
                 reduce: str = "mean",
                 normalize: str = "none",
                 flip: bool = False) -> ConvertResult:
    """Convert a single raw file; writes a one-sample manifest."""
    result = ConvertResult(out_dir=out_dir)
    os.makedirs(out_dir, exist_ok=True)
    stem = os.path.splitext(os.path.basename(path))[0]
    rel = stem + ".frm"
    out_path = os.path.join(out_dir, rel)
    sample_records = []
    cache_geometry = None
    try:
        info = _convert_one(path, fmt, out_path, slices, slice_mode,
                            geometry, None, flip)
        cache_geometry = info["geometry"]
        record = {"path": rel, "label": -1, "class": None}
        record.update(info)
        sample_records.append(record)
        result.converted.append(out_path)
    except (EvframeError, ValueError, OSError) as exc:
        result.failures.append((path, f"{type(exc).__name__}: {exc}"))
    result.manifest = {
        "format": fmt,
        "slices": slices,
        "slice_mode": slice_mode,
        "reduce": reduce,
        "normalize": normalize,
        "flip_polarity": flip,
        "geometry": cache_geometry,
        "classes": [],
        "samples": sample_records,
        "failures": [{"path": p, "error": e} for p, e in result.failures],
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as f:
        json.dump(result.manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return result


def read_manifest(cache_dir: str) -> Dict:
    with open(os.path.join(cache_dir, MANIFEST_NAME)) as f:
        return json.load(f)


def load_cached_dataset(cache_dir: str, reduce: Optional[str] = None,
                        normalize: Optional[str] = None,
                        dtype=np.float64,
                        indices: Optional[Sequence[int]] = None,
                        ) -> Tuple[np.ndarray, np.ndarray, List[str], Dict]:
    """Read a converted cache into arrays ready for the network.

    reduce/normalize default to the manifest's recorded modes. reduce
    "per_frame" keeps the slice axis, yielding (N, T, 2, H, W) inputs;
    the other modes collapse it per sample. Returns (x, y, classes,
    manifest). indices selects a subset of the manifest's sample list.
    """
    manifest = read_manifest(cache_dir)
    reduce = manifest["reduce"] if reduce is None else reduce
    normalize = manifest["normalize"] if normalize is None else normalize
    records = manifest["samples"]
    if indices is not None:
        records = [records[i] for i in indices]
    if not records:
        raise EmptyDataset(f"no samples selected from {cache_dir!r}")
    xs = []
    ys = []
    shape0 = None
    for record in records:
        frames = read_frames(os.path.join(cache_dir, record["path"]))
        if shape0 is None:
            shape0 = frames.data.shape
        elif frames.data.shape != shape0:
            raise ShapeMismatch(
                f"{record['path']}: frame tensor {frames.data.shape} "
                f"differs from the dataset's {shape0}")
        if reduce == "per_frame":
            arr = frames.data.astype(np.float64)
        else:
            arr = temporal_reduce(frames, reduce)
        xs.append(normalize_input(arr, normalize).astype(dtype))
        ys.append(record["label"])
    x = np.stack(xs)
    y = np.asarray(ys, dtype=np.int64)
    return x, y, list(manifest["classes"]), manifest
