"""Optic disc/cup segmentation with edge-integrated targets."""

from ._edgeseg import (
    Config,
    Error,
    Model,
    build_target,
    cdr,
    decode,
    dice,
    extract_edges,
    focal_loss,
    hausdorff,
    make_folds,
    roles,
    split,
    synth_sample,
)

__all__ = [
    "Config",
    "Error",
    "Model",
    "build_target",
    "cdr",
    "decode",
    "dice",
    "extract_edges",
    "focal_loss",
    "hausdorff",
    "make_folds",
    "roles",
    "split",
    "synth_sample",
]
