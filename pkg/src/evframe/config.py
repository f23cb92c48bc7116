"""Declarative run configuration for the train and eval commands.

One JSON document pins down the whole experiment: where the data lives,
how streams become frames, the architecture, and the optimizer settings.
Relative paths are resolved against the directory containing the config
file, so a checked-in config works from any working directory. Unknown
keys are rejected at every level to catch typos early.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import InvalidConfig
from .model import (MODEL_NORMALIZE_MODES, MODEL_REDUCE_MODES, ModelConfig,
                    config_from_dict)
from .representation import SLICE_MODES
from .train import TrainConfig

RUN_FIELDS = {
    "dataset", "format", "out_dir", "slices", "slice_mode", "reduce",
    "normalize", "geometry", "split_fraction", "seed", "fixed_timer",
    "auto_convert", "flip_polarity", "model", "train",
}

FORMATS = ("atis-bin", "aedat2", "evt", "frm")

# ModelConfig fields the pipeline derives from the data and the document's
# own reduce/normalize settings; a config cannot set them directly.
_DERIVED_MODEL_FIELDS = ("input_channels", "input_size", "reduce", "normalize")


@dataclass(frozen=True)
class RunConfig:
    dataset: str
    format: str
    out_dir: str
    slices: int = 20
    slice_mode: str = "remainder_to_last"
    reduce: str = "mean"
    normalize: str = "none"
    geometry: Optional[Tuple[int, int]] = None
    split_fraction: float = 0.9
    seed: int = 0
    fixed_timer: bool = False
    auto_convert: bool = False
    flip_polarity: bool = False
    model: Optional[Dict] = None
    train: Optional[Dict] = None

    def __post_init__(self):
        if self.format not in FORMATS:
            raise InvalidConfig(f"format must be one of {FORMATS}", field="format")
        if self.slices < 1:
            raise InvalidConfig("slices must be >= 1", field="slices")
        if self.slice_mode not in SLICE_MODES:
            raise InvalidConfig(f"slice_mode must be one of {SLICE_MODES}",
                                field="slice_mode")
        if self.reduce not in MODEL_REDUCE_MODES:
            raise InvalidConfig(f"reduce must be one of {MODEL_REDUCE_MODES}",
                                field="reduce")
        if self.normalize not in MODEL_NORMALIZE_MODES:
            raise InvalidConfig(f"normalize must be one of {MODEL_NORMALIZE_MODES}",
                                field="normalize")
        if not (0.0 < self.split_fraction < 1.0):
            raise InvalidConfig("split_fraction must lie strictly between 0 and 1",
                                field="split_fraction")
        if self.format == "atis-bin" and self.geometry is None:
            raise InvalidConfig("atis-bin input needs an explicit geometry",
                                field="geometry")
        if self.geometry is not None:
            if len(self.geometry) != 2 or min(self.geometry) < 1:
                raise InvalidConfig("geometry must be [H, W] with both >= 1",
                                    field="geometry")
            object.__setattr__(self, "geometry", tuple(int(v) for v in self.geometry))
        if self.model is not None:
            bad = sorted(set(self.model) & set(_DERIVED_MODEL_FIELDS))
            if bad:
                raise InvalidConfig(
                    f"model keys {bad} are derived from the pipeline settings",
                    field=f"model.{bad[0]}")
            unknown = sorted(set(self.model) - set(ModelConfig.__dataclass_fields__))
            if unknown:
                raise InvalidConfig(f"unknown model config keys: {unknown}",
                                    field=f"model.{unknown[0]}")
        if self.train is not None:
            unknown = sorted(set(self.train) - set(TrainConfig.__dataclass_fields__))
            if unknown:
                raise InvalidConfig(f"unknown train config keys: {unknown}",
                                    field=f"train.{unknown[0]}")

    def train_config(self) -> TrainConfig:
        doc = dict(self.train or {})
        doc.setdefault("seed", self.seed)
        return TrainConfig(**doc)

    def model_config(self, geometry: Tuple[int, int], num_classes: int) -> ModelConfig:
        """Complete the architecture from the data's geometry and classes.

        input_channels follows the reduce mode: a stacked frame tensor
        exposes 2 channels per slice, everything else shows the 2
        polarity channels.
        """
        channels = 2 * self.slices if self.reduce == "stack" else 2
        doc = dict(self.model or {})
        doc.setdefault("num_classes", num_classes)
        doc["input_channels"] = channels
        doc["input_size"] = tuple(geometry)
        doc["reduce"] = self.reduce
        doc["normalize"] = self.normalize
        return config_from_dict(doc)


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a JSON run config; relative paths become absolute."""
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config is not valid JSON: {exc}", field=path)
    if not isinstance(doc, dict):
        raise InvalidConfig("config root must be a JSON object", field=path)
    unknown = sorted(set(doc) - RUN_FIELDS)
    if unknown:
        raise InvalidConfig(f"unknown config keys: {unknown}", field=unknown[0])
    for required in ("dataset", "format", "out_dir"):
        if required not in doc:
            raise InvalidConfig(f"{required} is required", field=required)
    base = os.path.dirname(os.path.abspath(path))
    doc = dict(doc)
    for key in ("dataset", "out_dir"):
        doc[key] = os.path.normpath(os.path.join(base, doc[key]))
    run = RunConfig(**doc)
    if not os.path.exists(run.dataset):
        raise InvalidConfig(f"dataset path does not exist: {run.dataset}",
                            field="dataset")
    return run
