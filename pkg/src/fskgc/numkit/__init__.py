"""Minimal numerical substrate: tensors, a gradient tape, ops, and Adam."""

from .adam import AdamState, adam_step
from .checkpoint import load_arrays, load_checkpoint, save_arrays, save_checkpoint
from .ops import (
    add, concat, cosine, dot, exp, gather, layer_norm, log, matmul, mul,
    relu, reshape, segment_sum, sigmoid, softmax, sqnorm, stack, sub, tanh,
    tmean, transpose, tsum,
)
from .tensor import (
    Tape, Tensor, active_tape, as_tensor, backward, grad, is_checked,
    set_checked, zero_grads,
)

__all__ = [
    "AdamState", "adam_step", "load_arrays", "load_checkpoint",
    "save_arrays", "save_checkpoint", "add", "concat", "cosine", "dot",
    "exp", "gather", "layer_norm", "log", "matmul", "mul", "relu",
    "reshape", "segment_sum", "sigmoid", "softmax", "sqnorm", "stack",
    "sub", "tanh", "tmean", "transpose", "tsum", "Tape", "Tensor",
    "active_tape", "as_tensor", "backward", "grad", "is_checked",
    "set_checked", "zero_grads",
]
