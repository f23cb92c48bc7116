"""Command-line surface: convert, inspect, train, eval, report, synth.

Exit codes: 0 success, 2 configuration errors (bad flags, bad config
document, checkpoint/config digest mismatch), 3 I/O errors (missing or
unreadable files), 4 data errors (undecodable files, empty datasets,
partial conversions).
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from typing import List, Optional

from .accounting import delta_report, format_profile, profile_model
from .codec import decode_file
from .config import load_run_config
from .data import (MANIFEST_NAME, convert_dataset, convert_file,
                   load_cached_dataset, read_manifest)
from .errors import (ConfigDigestMismatch, EvframeError, InvalidConfig)
from .events import SensorGeometry, stream_stats
from .model import build_model, config_digest, default_config, vgg_original_config
from .representation import read_frames
from .synthetic import make_bar_dataset
from .train import (evaluate, load_train_checkpoint, split_by_class, train)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4

SLICE_MODE_FLAGS = {"strict": "strict_paper", "remainder": "remainder_to_last"}
NORMALIZE_FLAGS = {"none": "none", "max": "per_sample_max", "log1p": "log1p"}
SPLIT_FILE = "split.txt"


def _geometry_from_flag(pair: Optional[List[int]]) -> Optional[SensorGeometry]:
    if pair is None:
        return None
    h, w = pair
    return SensorGeometry(width=w, height=h)


def cmd_convert(args) -> int:
    geometry = _geometry_from_flag(args.geometry)
    if args.format == "atis-bin" and geometry is None:
        raise InvalidConfig("atis-bin input needs --geometry H W", field="geometry")
    kwargs = dict(slices=args.slices,
                  slice_mode=SLICE_MODE_FLAGS[args.slice_mode],
                  geometry=geometry, reduce=args.reduce,
                  normalize=NORMALIZE_FLAGS[args.normalize],
                  flip=args.flip_polarity)
    if os.path.isdir(args.input):
        result = convert_dataset(args.input, args.format, args.out, **kwargs)
    else:
        result = convert_file(args.input, args.format, args.out, **kwargs)
    for path, error in result.failures:
        print(f"FAILED {path}: {error}", file=sys.stderr)
    print(f"converted {len(result.converted)} sample(s), "
          f"{len(result.failures)} failure(s) -> {args.out}")
    return EXIT_OK if result.ok else EXIT_DATA


def _print_stream_report(fmt: str, stream) -> None:
    stats = stream_stats(stream)
    geo = stream.geometry
    print(f"format: {fmt}")
    print(f"geometry: {geo.height}x{geo.width} (HxW)")
    print(f"events: {stats.count}")
    print(f"duration_us: {stats.duration_us}")
    print(f"polarity: on={stats.on_count} off={stats.off_count}")
    print(f"x extent: [{stats.x_min}, {stats.x_max}]")
    print(f"y extent: [{stats.y_min}, {stats.y_max}]")
    if stream.label is not None:
        print(f"label: {stream.label}")


def cmd_inspect(args) -> int:
    ext = os.path.splitext(args.file)[1].lower()
    if ext == ".frm":
        frames = read_frames(args.file)
        t, c, h, w = frames.data.shape
        print("format: frm")
        print(f"slices: {t}")
        print(f"channels: {c}")
        print(f"geometry: {h}x{w} (HxW)")
        totals = frames.data.sum(axis=(1, 2, 3))
        print(f"events: {int(frames.data.sum())}")
        print("per-slice totals: " + " ".join(str(int(v)) for v in totals))
        per_channel = frames.data.sum(axis=(0, 2, 3))
        print(f"polarity: off={int(per_channel[0])} on={int(per_channel[1])}")
        return EXIT_OK
    if ext == ".bin":
        # ATIS coordinates are single bytes, so a 256x256 envelope always
        # holds; the true extent is reported from the decoded events.
        geometry = _geometry_from_flag(args.geometry) or SensorGeometry(256, 256)
        stream = decode_file(args.file, "atis-bin", geometry=geometry)
        _print_stream_report("atis-bin", stream)
        if args.geometry is None:
            print("note: geometry not given, bounds checked against 256x256")
        return EXIT_OK
    if ext == ".aedat":
        _print_stream_report("aedat2", decode_file(args.file, "aedat2"))
        return EXIT_OK
    if ext == ".evt":
        _print_stream_report("evt", decode_file(args.file, "evt"))
        return EXIT_OK
    raise InvalidConfig(f"cannot inspect {ext or 'extensionless'} files "
                        "(expected .bin, .aedat, .evt or .frm)", field="file")


def _ensure_cache(run, auto_convert: bool) -> str:
    """Locate (or build) the converted cache for a run config."""
    if run.format == "frm":
        cache = run.dataset
        if not os.path.exists(os.path.join(cache, MANIFEST_NAME)):
            raise InvalidConfig(f"no {MANIFEST_NAME} in dataset dir {cache}",
                                field="dataset")
        return cache
    cache = os.path.join(run.out_dir, "cache")
    if os.path.exists(os.path.join(cache, MANIFEST_NAME)):
        return cache
    if not (auto_convert or run.auto_convert):
        raise InvalidConfig(
            "dataset is raw events and no converted cache exists; run "
            "`evframe convert` first or set auto_convert",
            field="auto_convert")
    geometry = None
    if run.geometry is not None:
        geometry = SensorGeometry(width=run.geometry[1], height=run.geometry[0])
    result = convert_dataset(run.dataset, run.format, cache, slices=run.slices,
                             slice_mode=run.slice_mode, geometry=geometry,
                             reduce=run.reduce, normalize=run.normalize,
                             flip=run.flip_polarity)
    for path, error in result.failures:
        print(f"FAILED {path}: {error}", file=sys.stderr)
    if not result.ok:
        raise EvframeError(
            f"{len(result.failures)} file(s) failed to convert; "
            "fix or remove them and retry")
    return cache


def _check_manifest(run, manifest) -> None:
    if manifest["slices"] != run.slices:
        raise InvalidConfig(
            f"cache was converted with slices={manifest['slices']} but the "
            f"config asks for {run.slices}; reconvert or adjust", field="slices")


def _write_split_file(path: str, manifest, train_idx, held_idx) -> None:
    names = {int(i): "train" for i in train_idx}
    names.update({int(i): "held" for i in held_idx})
    with open(path, "w") as f:
        for i, record in enumerate(manifest["samples"]):
            f.write(f"{record['path']}\t{record['label']}\t{names[i]}\n")


def _read_split_file(path: str) -> dict:
    split_map = {}
    with open(path) as f:
        for line in f:
            rel, _, split = line.rstrip("\n").split("\t")
            split_map[rel] = split
    return split_map


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    cache = _ensure_cache(run, args.auto_convert)
    manifest = read_manifest(cache)
    _check_manifest(run, manifest)
    tc = run.train_config()
    x, y, classes, _ = load_cached_dataset(cache, reduce=run.reduce,
                                           normalize=run.normalize,
                                           dtype=tc.dtype())
    model_cfg = run.model_config(tuple(manifest["geometry"]), len(classes))
    model = build_model(model_cfg, seed=run.seed, dtype=tc.dtype())
    train_idx, held_idx = split_by_class(y, run.split_fraction, seed=run.seed)
    os.makedirs(run.out_dir, exist_ok=True)
    _write_split_file(os.path.join(run.out_dir, SPLIT_FILE), manifest,
                      train_idx, held_idx)
    state = None
    if args.resume is not None:
        state = load_train_checkpoint(args.resume, model)
    timer = (lambda: 0.0) if run.fixed_timer else time.perf_counter
    state = train(model, (x[train_idx], y[train_idx]), tc,
                  val_set=(x[held_idx], y[held_idx]),
                  out_dir=run.out_dir, state=state, timer=timer,
                  log_sink=print if args.verbose else None)
    last = state.history[-1] if state.history else {}
    print(f"config digest: {config_digest(model_cfg)}")
    print(f"epochs completed: {state.epoch}")
    if "train_top1" in last:
        print(f"final train top1: {last['train_top1']:.6f}")
    if "val_top1" in last:
        print(f"final held-out top1: {last['val_top1']:.6f}")
    print(f"best held-out top1: {state.best_metric:.6f}")
    print(f"artifacts: {run.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    run = load_run_config(args.config)
    manifest = read_manifest(args.data)
    _check_manifest(run, manifest)
    indices = None
    if args.split != "all":
        split_path = args.split_file or os.path.join(
            os.path.dirname(os.path.abspath(args.ckpt)), SPLIT_FILE)
        split_map = _read_split_file(split_path)
        indices = [i for i, rec in enumerate(manifest["samples"])
                   if split_map.get(rec["path"]) == args.split]
    tc = run.train_config()
    x, y, classes, _ = load_cached_dataset(args.data, reduce=run.reduce,
                                           normalize=run.normalize,
                                           dtype=tc.dtype(), indices=indices)
    model_cfg = run.model_config(tuple(manifest["geometry"]), len(classes))
    model = build_model(model_cfg, seed=run.seed, dtype=tc.dtype())
    load_train_checkpoint(args.ckpt, model)
    acc, confusion = evaluate(model, (x, y))
    print(f"samples: {len(y)}")
    print(f"top1: {acc:.6f}")
    out_dir = args.out or os.path.dirname(os.path.abspath(args.ckpt))
    os.makedirs(out_dir, exist_ok=True)
    confusion_path = os.path.join(out_dir, "confusion.txt")
    width = len(str(int(confusion.max())))
    with open(confusion_path, "w") as f:
        f.write("# rows: true class, columns: predicted class\n")
        f.write("# classes: " + " ".join(classes) + "\n")
        for row in confusion:
            f.write(" ".join(f"{int(v):>{width}}" for v in row) + "\n")
    print(f"confusion matrix: {confusion_path}")
    return EXIT_OK


def cmd_report(args) -> int:
    h, w = args.size
    baseline = build_model(vgg_original_config(args.classes, input_size=(h, w)))
    ours = build_model(default_config(args.classes, input_size=(h, w)))
    print(delta_report(baseline, ours, "vgg-baseline", "evframe"))
    if args.full:
        print()
        print("=== baseline per-layer profile ===")
        print(format_profile(profile_model(baseline)))
        print()
        print("=== evframe per-layer profile ===")
        print(format_profile(profile_model(ours)))
    return EXIT_OK


def cmd_synth(args) -> int:
    paths, classes = make_bar_dataset(args.out, n_per_class=args.n,
                                      geometry=tuple(args.geometry),
                                      events_per_step=args.events_per_step,
                                      duration_us=args.duration_us,
                                      seed=args.seed)
    print(f"wrote {len(paths)} streams over classes {classes} -> {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evframe",
        description="Event-camera frame pipeline: decode, slice, train, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="decode raw event files into cached .frm frames")
    p.add_argument("input", help="raw dataset directory (class subdirs) or a single file")
    p.add_argument("--format", required=True, choices=("atis-bin", "aedat2", "evt"))
    p.add_argument("--slices", type=int, default=20, metavar="T")
    p.add_argument("--slice-mode", choices=tuple(SLICE_MODE_FLAGS), default="remainder")
    p.add_argument("--reduce", choices=("mean", "sum", "stack", "per_frame"),
                   default="mean", help="default reduce mode recorded in the manifest")
    p.add_argument("--normalize", choices=tuple(NORMALIZE_FLAGS), default="none",
                   help="default normalize mode recorded in the manifest")
    p.add_argument("--geometry", type=int, nargs=2, metavar=("H", "W"),
                   help="sensor size; required for atis-bin")
    p.add_argument("--flip-polarity", action="store_true",
                   help="swap ON and OFF channels while decoding")
    p.add_argument("--out", required=True, help="cache directory to write")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("inspect", help="print a human-readable report for one file")
    p.add_argument("file")
    p.add_argument("--geometry", type=int, nargs=2, metavar=("H", "W"))
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("train", help="train from a declarative config")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", metavar="CKPT")
    p.add_argument("--auto-convert", action="store_true",
                   help="convert raw events first if the cache is missing")
    p.add_argument("--verbose", action="store_true",
                   help="echo per-epoch records to stdout")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a converted dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="converted cache directory")
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=("all", "train", "held"), default="all",
                   help="restrict to one side of the recorded split")
    p.add_argument("--split-file", help="split manifest (default: next to the checkpoint)")
    p.add_argument("--out", help="directory for confusion.txt (default: next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="parameter/FLOP accounting against the VGG baseline")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--size", type=int, nargs=2, default=(128, 128), metavar=("H", "W"))
    p.add_argument("--full", action="store_true", help="also print per-layer profiles")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="generate the synthetic left/right bar dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=32, help="streams per class")
    p.add_argument("--geometry", type=int, nargs=2, default=(32, 32), metavar=("H", "W"))
    p.add_argument("--events-per-step", type=int, default=96)
    p.add_argument("--duration-us", type=int, default=64_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfig, ConfigDigestMismatch) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EvframeError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
