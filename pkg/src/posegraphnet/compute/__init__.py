"""Minimal tensor engine: reverse-mode gradients, Adam, checkpoints."""
from .checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .rng import make_rng
from .tensor import (
    BatchNormState,
    Tensor,
    absolute,
    add,
    as_tensor,
    batchnorm,
    concat,
    div,
    dropout,
    getitem,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sqrt,
    square,
    stack,
    sub,
    transpose,
)
from .tensor import sum as tsum

__all__ = [
    "Adam", "AdamState", "BatchNormState", "Tensor", "absolute", "adam_step", "add",
    "as_tensor", "batchnorm", "concat", "decode_checkpoint", "div", "dropout",
    "encode_checkpoint", "getitem", "grad_check", "load_checkpoint", "make_rng", "matmul",
    "mean", "mul", "relu", "reshape", "save_checkpoint", "scale", "sigmoid", "sqrt",
    "square", "stack", "sub", "transpose", "tsum",
]
