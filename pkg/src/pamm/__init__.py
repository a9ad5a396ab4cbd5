"""Selective state-space blocks with per-task parameter experts and Hilbert scans."""

from .tensor import (
    NumericError,
    Rng,
    ShapeError,
    Tensor,
    TensorError,
)

__version__ = "0.1.0"

__all__ = ["Tensor", "Rng", "TensorError", "ShapeError", "NumericError", "__version__"]
