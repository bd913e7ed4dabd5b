"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from . import ops
from .checkpoint import HEADER, CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import NonFiniteError, grad_check
from .ops import ShapeError
from .tensor import Graph, Tensor, as_tensor

__all__ = [
    "HEADER",
    "CheckpointError",
    "Graph",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "grad_check",
    "load_checkpoint",
    "ops",
    "save_checkpoint",
]
