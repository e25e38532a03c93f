"""Bespoke dense-tensor math with reverse-mode differentiation."""

from .gradcheck import grad_check
from .nn import (
    MLP,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    Parameter,
    sinusoid,
)
from .optim import Adam, clip_grad_norm
from .tensor import (
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    default_dtype,
    exp,
    finite_checks,
    getitem,
    grad_enabled,
    layer_norm,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    silu,
    softmax,
    softmax_rows,
    stack,
    sub,
    swapaxes,
    tanh,
    transpose,
    tsum,
    using_dtype,
)

__all__ = [
    "Adam",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "Tensor",
    "add",
    "as_tensor",
    "broadcast_to",
    "clip_grad_norm",
    "concat",
    "default_dtype",
    "exp",
    "finite_checks",
    "getitem",
    "grad_check",
    "grad_enabled",
    "layer_norm",
    "log",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "set_default_dtype",
    "sigmoid",
    "silu",
    "sinusoid",
    "softmax",
    "softmax_rows",
    "stack",
    "sub",
    "swapaxes",
    "tanh",
    "transpose",
    "tsum",
    "using_dtype",
]
