from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    Tensor,
    active_tape,
    backward,
)
from .nn import MLP, Params, params_digest
from .optim import AdamState, adam_step, clip_global_norm, cosine_lr, global_norm
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "AdamState",
    "CheckpointError",
    "MLP",
    "NonFiniteError",
    "Params",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "adam_step",
    "backward",
    "clip_global_norm",
    "cosine_lr",
    "global_norm",
    "load_checkpoint",
    "params_digest",
    "save_checkpoint",
]
