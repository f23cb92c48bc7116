"""VGG-style classifier with optional convolutional block attention.

The network is a stack of stages. Each stage applies (conv 3x3 same-pad,
batchnorm, ReLU) ``convs_per_block`` times, optionally refines the feature
map with a CBAM block, then halves the spatial size with a 2x2 max pool.
After the last stage a classifier head maps features to logits: ``gap``
pools globally and applies one linear layer, ``flatten`` reshapes and
applies a configurable MLP (the classic wide-FC head is available as the
``vgg_original_config`` preset so parameter and FLOP budgets of both
designs can be compared).

Inputs may be 4-D ``(N, C, H, W)`` or 5-D ``(N, T, C, H, W)``. In the 5-D
case every frame is scored independently with shared weights and the T
per-frame logit vectors are averaged per sample.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Tuple

import numpy as np

from .attention import CBAM_ORDERS, Cbam
from .errors import InvalidConfig, ShapeMismatch
from .nn.layers import (BatchNorm2d, Conv2d, Flatten, GlobalAvgPool, Layer,
                        Linear, MaxPool2d, ReLU, Sequential)

HEADS = ("gap", "flatten")

# Temporal handling modes accepted by the data pipeline. The first three
# collapse a frame stack into one multi-channel image before the network
# sees it; per_frame keeps the T axis and feeds 5-D batches.
MODEL_REDUCE_MODES = ("mean", "sum", "stack", "per_frame")
MODEL_NORMALIZE_MODES = ("none", "per_sample_max", "log1p")


@dataclass(frozen=True)
class ModelConfig:
    """Static description of the architecture.

    ``input_channels`` is the channel count of one network input: 2 for
    mean/sum/per_frame reduction of a two-polarity frame stack, 2*T for
    stack reduction. ``cbam_stages`` selects which stages get an attention
    block (None means all of them). ``reduce`` and ``normalize`` echo the
    data-pipeline settings so a checkpoint pins down the whole input
    recipe, not just the weights.
    """

    num_classes: int
    input_channels: int = 2
    input_size: Tuple[int, int] = (128, 128)
    stage_channels: Tuple[int, ...] = (64, 128, 256, 512, 512)
    convs_per_block: int = 2
    cbam_stages: Optional[Tuple[bool, ...]] = None
    cbam_reduction: int = 16
    cbam_kernel: int = 7
    cbam_order: str = "cam_then_sam"
    cbam_residual: bool = False
    head: str = "gap"
    classifier_hidden: Tuple[int, ...] = ()
    reduce: str = "mean"
    normalize: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "input_size", tuple(self.input_size))
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "classifier_hidden", tuple(self.classifier_hidden))
        if self.cbam_stages is not None:
            object.__setattr__(self, "cbam_stages", tuple(bool(v) for v in self.cbam_stages))
        if self.num_classes < 2:
            raise InvalidConfig("need at least 2 classes", field="num_classes")
        if self.input_channels < 1:
            raise InvalidConfig("input_channels must be >= 1", field="input_channels")
        if len(self.input_size) != 2 or min(self.input_size) < 1:
            raise InvalidConfig("input_size must be (H, W) with both >= 1",
                                field="input_size")
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise InvalidConfig("stage_channels must be a non-empty list of widths >= 1",
                                field="stage_channels")
        if self.convs_per_block < 1:
            raise InvalidConfig("convs_per_block must be >= 1", field="convs_per_block")
        if self.cbam_stages is not None and len(self.cbam_stages) != len(self.stage_channels):
            raise InvalidConfig("cbam_stages needs one flag per stage", field="cbam_stages")
        if self.cbam_reduction < 1:
            raise InvalidConfig("cbam_reduction must be >= 1", field="cbam_reduction")
        if self.cbam_kernel < 1 or self.cbam_kernel % 2 == 0:
            raise InvalidConfig("cbam_kernel must be odd and >= 1", field="cbam_kernel")
        if self.cbam_order not in CBAM_ORDERS:
            raise InvalidConfig(f"cbam_order must be one of {CBAM_ORDERS}",
                                field="cbam_order")
        if self.head not in HEADS:
            raise InvalidConfig(f"head must be one of {HEADS}", field="head")
        if any(h < 1 for h in self.classifier_hidden):
            raise InvalidConfig("classifier_hidden widths must be >= 1",
                                field="classifier_hidden")
        if self.reduce not in MODEL_REDUCE_MODES:
            raise InvalidConfig(f"reduce must be one of {MODEL_REDUCE_MODES}",
                                field="reduce")
        if self.normalize not in MODEL_NORMALIZE_MODES:
            raise InvalidConfig(f"normalize must be one of {MODEL_NORMALIZE_MODES}",
                                field="normalize")
        # Each stage ends in a 2x2/2 max pool, so the spatial extent is
        # floor-halved once per stage and must stay at least 1x1.
        h, w = self.input_size
        for i in range(len(self.stage_channels)):
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise InvalidConfig(
                    f"spatial size collapses below 1x1 at stage {i} "
                    f"for input {self.input_size[0]}x{self.input_size[1]}",
                    field="stage_channels")

    def stage_has_cbam(self, index: int) -> bool:
        if self.cbam_stages is None:
            return True
        return self.cbam_stages[index]

    def feature_shape(self) -> Tuple[int, int, int]:
        """Channel and spatial extent entering the head, as (C, H, W)."""
        h, w = self.input_size
        for _ in self.stage_channels:
            h, w = h // 2, w // 2
        return self.stage_channels[-1], h, w


def config_digest(config: ModelConfig) -> str:
    """Hex SHA-256 of the canonical JSON form; pins checkpoints to configs."""
    doc = asdict(config)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def config_to_dict(config: ModelConfig) -> dict:
    return asdict(config)


def config_from_dict(doc: dict) -> ModelConfig:
    known = set(ModelConfig.__dataclass_fields__)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise InvalidConfig(f"unknown model config keys: {unknown}", field=unknown[0])
    if "num_classes" not in doc:
        raise InvalidConfig("num_classes is required", field="num_classes")
    doc = dict(doc)
    for key in ("input_size", "stage_channels", "classifier_hidden", "cbam_stages"):
        if key in doc and doc[key] is not None:
            doc[key] = tuple(doc[key])
    return ModelConfig(**doc)


class VggCbam(Layer):
    """The assembled network. Build via build_model for seeded init."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 dtype=np.float32):
        super().__init__()
        self.config = config
        self.stages: List[Sequential] = []
        c_in = config.input_channels
        for i, c_out in enumerate(config.stage_channels):
            layers: List[Layer] = []
            names: List[str] = []
            c_prev = c_in
            for j in range(config.convs_per_block):
                layers.append(Conv2d(c_prev, c_out, 3, padding=1, bias=True,
                                     dtype=dtype, rng=rng))
                names.append(f"conv{j + 1}")
                layers.append(BatchNorm2d(c_out, dtype=dtype))
                names.append(f"bn{j + 1}")
                layers.append(ReLU())
                names.append(f"relu{j + 1}")
                c_prev = c_out
            if config.stage_has_cbam(i):
                layers.append(Cbam(c_out, reduction=config.cbam_reduction,
                                   kernel_size=config.cbam_kernel,
                                   order=config.cbam_order,
                                   residual=config.cbam_residual,
                                   dtype=dtype, rng=rng))
                names.append("cbam")
            layers.append(MaxPool2d(2))
            names.append("pool")
            self.stages.append(Sequential(*layers, names=names))
            c_in = c_out
        c_feat, h_feat, w_feat = config.feature_shape()
        if config.head == "gap":
            self.head = Sequential(
                GlobalAvgPool(), Flatten(),
                Linear(c_feat, config.num_classes, dtype=dtype, rng=rng),
                names=["gap", "flatten", "fc"])
        else:
            layers = [Flatten()]
            names = ["flatten"]
            f_in = c_feat * h_feat * w_feat
            for j, width in enumerate(config.classifier_hidden):
                layers.append(Linear(f_in, width, dtype=dtype, rng=rng))
                names.append(f"fc{j + 1}")
                layers.append(ReLU())
                names.append(f"relu{j + 1}")
                f_in = width
            layers.append(Linear(f_in, config.num_classes, dtype=dtype, rng=rng))
            names.append("fc_out")
            self.head = Sequential(*layers, names=names)
        self._frames = None

    def children(self):
        named = [(f"stage{i}", s) for i, s in enumerate(self.stages)]
        named.append(("head", self.head))
        return named

    def _check_input(self, x: np.ndarray) -> None:
        c, (h, w) = self.config.input_channels, self.config.input_size
        if x.shape[-3:] != (c, h, w):
            raise ShapeMismatch(
                f"model expects trailing dims ({c}, {h}, {w}), got {x.shape}")
        if x.ndim not in (4, 5):
            raise ShapeMismatch(f"model expects 4-D or 5-D input, got {x.ndim}-D")

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        self._check_input(x)
        if x.ndim == 5:
            n, t = x.shape[:2]
            self._frames = (n, t)
            x = x.reshape(n * t, *x.shape[2:])
        else:
            self._frames = None
        for stage in self.stages:
            x = stage.forward(x, train)
        logits = self.head.forward(x, train)
        if self._frames is not None:
            n, t = self._frames
            logits = logits.reshape(n, t, -1).mean(axis=1)
        return logits

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._frames is not None:
            n, t = self._frames
            dout = np.broadcast_to(dout[:, None, :] / t,
                                   (n, t, dout.shape[-1]))
            dout = dout.reshape(n * t, -1)
        dx = self.head.backward(dout)
        for stage in reversed(self.stages):
            dx = stage.backward(dx)
        if self._frames is not None:
            n, t = self._frames
            dx = dx.reshape(n, t, *dx.shape[1:])
        return dx


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> VggCbam:
    """Construct the network with parameters drawn deterministically from seed."""
    rng = np.random.default_rng(seed)
    return VggCbam(config, rng=rng, dtype=dtype)


def default_config(num_classes: int, input_size: Tuple[int, int] = (128, 128),
                   input_channels: int = 2, reduce: str = "mean",
                   normalize: str = "none") -> ModelConfig:
    """The two-channel attention-equipped network used throughout."""
    return ModelConfig(num_classes=num_classes, input_channels=input_channels,
                       input_size=tuple(input_size), reduce=reduce,
                       normalize=normalize)


def vgg_original_config(num_classes: int,
                        input_size: Tuple[int, int] = (128, 128)) -> ModelConfig:
    """Classic 3-channel baseline: no attention, wide flattened FC head.

    Exists so the accounting tools can print a per-layer parameter and
    FLOP delta between this baseline and the two-channel default.
    """
    return ModelConfig(num_classes=num_classes, input_channels=3,
                       input_size=tuple(input_size),
                       cbam_stages=(False,) * 5, head="flatten",
                       classifier_hidden=(4096, 4096))
