"""Desk-scale rectified-flow image lab with attention-level editing."""

from ._core import (
    Model,
    __version__,
    init_model,
    load_model,
    object_mask,
    read_ppm,
    write_ppm,
)

__all__ = [
    "Model",
    "__version__",
    "init_model",
    "load_model",
    "object_mask",
    "read_ppm",
    "write_ppm",
]
