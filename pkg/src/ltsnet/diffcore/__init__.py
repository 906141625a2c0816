from .gradcheck import GradCheckReport, GradientStructureError, check_gradients, finite_difference_gradient
from .optim import MissingGradientError, ParamStore, adam_step
from .tensor import (
    NonFiniteError,
    Tensor,
    absolute,
    add,
    as_tensor,
    broadcast_to,
    concat,
    conv2d,
    div,
    exp,
    grad_reverse,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    softplus,
    square,
    sub,
    sum_,
    tanh,
    transpose,
    upsample_nearest,
)

__all__ = [
    "GradCheckReport",
    "GradientStructureError",
    "MissingGradientError",
    "NonFiniteError",
    "ParamStore",
    "Tensor",
    "absolute",
    "adam_step",
    "add",
    "as_tensor",
    "broadcast_to",
    "check_gradients",
    "concat",
    "conv2d",
    "div",
    "exp",
    "finite_difference_gradient",
    "grad_reverse",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "no_grad",
    "relu",
    "reshape",
    "sigmoid",
    "slice_",
    "softmax",
    "softplus",
    "square",
    "sub",
    "sum_",
    "tanh",
    "transpose",
    "upsample_nearest",
]
