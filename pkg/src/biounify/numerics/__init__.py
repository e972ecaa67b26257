"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .tensor import (
    Graph,
    Tensor,
    add,
    as_tensor,
    backward,
    broadcast_to,
    concat,
    count_matmul_macs,
    default_dtype,
    div,
    dropout,
    exp,
    gelu,
    get_default_dtype,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    rfft_mag,
    set_default_dtype,
    sigmoid,
    softmax,
    sqrt,
    stack,
    sub,
    sum_,
    tanh,
    transpose,
    where,
)
from .nn import (
    Conv1d,
    FeedForward,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    unfold1d,
)

__all__ = [name for name in dir() if not name.startswith("_")]
