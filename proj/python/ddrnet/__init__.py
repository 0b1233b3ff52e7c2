from ._core import (
    Error,
    FormatError,
    IoError,
    Model,
    ShapeError,
    UnknownVariantError,
    ValueError,
    analyze,
    cross_entropy,
    decode_checkpoint,
    deep_supervision_loss,
    encode_checkpoint,
    gradient_check,
    list_variants,
    num_threads,
    ohem_cross_entropy,
    read_checkpoint,
    set_num_threads,
    variant,
)

__all__ = [
    "Error",
    "FormatError",
    "IoError",
    "Model",
    "ShapeError",
    "UnknownVariantError",
    "ValueError",
    "analyze",
    "cross_entropy",
    "decode_checkpoint",
    "deep_supervision_loss",
    "encode_checkpoint",
    "gradient_check",
    "list_variants",
    "num_threads",
    "ohem_cross_entropy",
    "read_checkpoint",
    "set_num_threads",
    "variant",
]
