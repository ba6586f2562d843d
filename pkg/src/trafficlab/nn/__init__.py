"""Minimal differentiable compute core: tensors, tape, layers, Adam."""
from .tensor import (
    Graph,
    Tensor,
    add,
    concat,
    cumsum,
    dense,
    exp,
    layernorm,
    log,
    log_softmax,
    max_pool_over_set,
    mean,
    mul,
    relu,
    repeat,
    reshape,
    select_index,
    softmax,
    sqrt,
    square,
    sub,
    sum_,
    take,
)
from .params import ParamStore
from .optim import Adam, GradientNaNError, linear_lr
from .gradcheck import max_grad_error, relative_error

__all__ = [
    "Graph",
    "Tensor",
    "ParamStore",
    "Adam",
    "GradientNaNError",
    "linear_lr",
    "max_grad_error",
    "relative_error",
    "add",
    "concat",
    "cumsum",
    "dense",
    "exp",
    "layernorm",
    "log",
    "log_softmax",
    "max_pool_over_set",
    "mean",
    "mul",
    "relu",
    "repeat",
    "reshape",
    "select_index",
    "softmax",
    "sqrt",
    "square",
    "sub",
    "sum_",
    "take",
]
