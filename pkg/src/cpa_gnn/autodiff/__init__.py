"""Minimal dense-tensor engine with reverse-mode automatic differentiation."""

from . import ops
from .gradcheck import GradCheckReport, gradient_check, relative_deviation
from .optim import Adam, AdamState, adam_step
from .tensor import ShapeError, Tape, TapeError, Tensor, active_tape, backward

__all__ = [
    "Adam",
    "AdamState",
    "GradCheckReport",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "active_tape",
    "adam_step",
    "backward",
    "gradient_check",
    "ops",
    "relative_deviation",
]
