"""Minimal reverse-mode autodiff engine used by the summarization model."""

from .gradcheck import NondeterministicLossError, grad_check
from .kernels import BACKEND
from .params import ParameterStore, name_rng
from .tensor import (
    ContractError,
    Tensor,
    add,
    clamp,
    concat,
    cosine_similarity,
    div,
    dropout,
    exp,
    flip_rows,
    gru_cell,
    gru_sequence,
    index,
    linear,
    log,
    matmul,
    mul,
    no_grad,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    sub,
    tanh,
    tensor,
    transpose,
    tsum,
)

__all__ = [
    "BACKEND", "ContractError", "NondeterministicLossError", "ParameterStore", "Tensor",
    "add", "clamp", "concat", "cosine_similarity", "div", "dropout", "exp", "flip_rows",
    "grad_check", "gru_cell", "gru_sequence", "index", "linear", "log", "matmul", "mul",
    "name_rng", "no_grad", "reshape", "sigmoid", "softmax", "sqrt", "sub", "tanh", "tensor",
    "transpose", "tsum",
]
