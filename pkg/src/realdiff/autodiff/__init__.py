from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_params
from .optim import Adam, OptimizerState, adam_step, clip_grad_norm
from .tensor import Gradients, Tape, Tensor, active_tape, as_tensor, record

__all__ = [
    "Adam", "Gradients", "OptimizerState", "Tape", "Tensor", "active_tape", "adam_step",
    "as_tensor", "clip_grad_norm", "grad_check", "grad_check_params", "load_checkpoint",
    "ops", "record", "save_checkpoint",
]
