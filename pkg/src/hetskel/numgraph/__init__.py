from .core import (
    Node,
    NumGraphError,
    add,
    add_scalar,
    as_node,
    backward,
    concat,
    const,
    exp,
    gelu,
    group_max,
    l2_normalize,
    layer_norm,
    log,
    log1p,
    matmul,
    max_pool,
    mean,
    mul,
    param,
    relu,
    reshape,
    slice_,
    softmax,
    stack,
    sub,
    sum_,
    take,
    transpose,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Node", "NumGraphError", "GradCheckReport", "add", "add_scalar", "as_node", "backward", "concat",
    "const", "exp", "gelu", "grad_check", "group_max", "l2_normalize", "layer_norm", "log", "log1p",
    "matmul", "max_pool", "mean", "mul", "param", "relu", "reshape", "slice_", "softmax",
    "stack", "sub", "sum_", "take", "transpose",
]
