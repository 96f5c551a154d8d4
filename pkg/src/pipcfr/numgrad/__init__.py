"""Small float64 tensor engine with reverse-mode autodiff and Adam."""

from .optim import Adam, AdamState, adam_step
from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    div,
    elu,
    exp,
    is_grad_enabled,
    log,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    sigmoid,
    softplus,
    sqrt,
    square,
    sub,
    sum_,
    take_rows,
    transpose,
)

__all__ = [
    "Adam", "AdamState", "adam_step", "DomainError", "ShapeError", "Tensor", "add",
    "as_tensor", "backward", "clamp", "concat", "div", "elu", "exp", "is_grad_enabled",
    "log", "make_op", "matmul", "mean", "mul", "neg", "no_grad", "relu", "reshape",
    "sigmoid", "softplus", "sqrt", "square", "sub", "sum_", "take_rows", "transpose",
]
