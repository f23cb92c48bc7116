"""evframe: event-camera streams to frames to a from-scratch CNN.

The pipeline in one breath: decode raw event files (ATIS .bin, AEDAT
2.0, portable .evt) into validated streams, slice each stream into a
fixed number of equal-count segments, integrate the segments into
two-channel (OFF, ON) count frames, and feed the reduced tensors to a
numpy VGG-style network with optional channel/spatial attention, trained
with Adam and cross-entropy. Everything is deterministic under a seed,
and analytic parameter/FLOP accounting is built in.
"""

from .errors import (BadMagic, ConfigDigestMismatch, CountMismatch,
                     DegenerateBatch, EmptyDataset, EmptyStream, EvframeError,
                     InvalidConfig, LabelOutOfRange, MalformedHeader,
                     NonMonotonicTimestamps, OutOfBounds, ShapeMismatch,
                     TooFewEvents, TruncatedRecord, UnsupportedVersion)
from .events import (EVENT_DTYPE, Event, EventStream, SensorGeometry,
                     StreamStats, concat_streams, stream_from_arrays,
                     stream_from_events, stream_stats, validate_stream)
from .codec import (decode_aedat2, decode_atis_bin, decode_file,
                    decode_portable, encode_portable, flip_polarity,
                    scan_dataset, unwrap_timestamps)
from .representation import (FrameTensor, SliceSpec, integrate_frames,
                             normalize_input, read_frames, slice_by_count,
                             temporal_reduce, write_frames)
from .attention import Cbam, ChannelAttention, SpatialAttention
from .model import (ModelConfig, VggCbam, build_model, config_digest,
                    default_config, vgg_original_config)
from .accounting import (count_flops, count_params, delta_report,
                         format_profile, profile_model)
from .optim import AdamHyper, AdamState, adam_init, adam_step
from .train import (TrainConfig, TrainState, evaluate, split_by_class, train)
from .data import convert_dataset, load_cached_dataset
from .synthetic import bar_stream, make_bar_dataset

__version__ = "0.1.0"

__all__ = [
    "EVENT_DTYPE", "Event", "EventStream", "SensorGeometry", "StreamStats",
    "concat_streams", "stream_from_arrays", "stream_from_events",
    "stream_stats", "validate_stream",
    "decode_aedat2", "decode_atis_bin", "decode_file", "decode_portable",
    "encode_portable", "flip_polarity", "scan_dataset", "unwrap_timestamps",
    "FrameTensor", "SliceSpec", "integrate_frames", "normalize_input",
    "read_frames", "slice_by_count", "temporal_reduce", "write_frames",
    "Cbam", "ChannelAttention", "SpatialAttention",
    "ModelConfig", "VggCbam", "build_model", "config_digest",
    "default_config", "vgg_original_config",
    "count_flops", "count_params", "delta_report", "format_profile",
    "profile_model",
    "AdamHyper", "AdamState", "adam_init", "adam_step",
    "TrainConfig", "TrainState", "evaluate", "split_by_class", "train",
    "convert_dataset", "load_cached_dataset",
    "bar_stream", "make_bar_dataset",
    "EvframeError", "BadMagic", "ConfigDigestMismatch", "CountMismatch",
    "DegenerateBatch", "EmptyDataset", "EmptyStream", "InvalidConfig",
    "LabelOutOfRange", "MalformedHeader", "NonMonotonicTimestamps",
    "OutOfBounds", "ShapeMismatch", "TooFewEvents", "TruncatedRecord",
    "UnsupportedVersion",
    "__version__",
]
