"""Minimal dense tensors with tape-based reverse-mode differentiation."""
from . import ops
from .core import NumericError, ShapeError, Tape, Tensor, active_tape, backward, no_record
from .gradcheck import grad_check, grad_check_params
from .optim import AdamState, adam_step

__all__ = [
    "ops", "Tensor", "Tape", "backward", "no_record", "active_tape",
    "ShapeError", "NumericError", "AdamState", "adam_step",
    "grad_check", "grad_check_params",
]
