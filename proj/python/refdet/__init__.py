"""Reference-based defect detection: geometry, evaluation, and inference."""

from ._core import (
    Box,
    Detection,
    EvalReport,
    GtBox,
    Predictor,
    average_precision,
    clip_box,
    context_box,
    decode_deltas,
    encode_deltas,
    iou,
    map50,
    map_level,
    mean_pre,
    nms,
    read_png,
    synth_generate,
    tr_pre,
    write_png,
)

__all__ = [
    "Box",
    "Detection",
    "EvalReport",
    "GtBox",
    "Predictor",
    "average_precision",
    "clip_box",
    "context_box",
    "decode_deltas",
    "encode_deltas",
    "iou",
    "map50",
    "map_level",
    "mean_pre",
    "nms",
    "read_png",
    "synth_generate",
    "tr_pre",
    "write_png",
]
