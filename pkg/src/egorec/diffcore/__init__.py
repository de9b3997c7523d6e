"""Minimal dense-tensor engine: recorded forward passes, reverse-mode
gradients, and a finite-difference verification harness."""

from .tensor import (
    NonFiniteError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    active_tape,
    as_tensor,
    backward,
    set_debug_nan,
)
from .ops import (
    abs_,
    add,
    avg_pool2d,
    broadcast_to,
    clip,
    concat,
    conv2d,
    conv_transpose2d,
    correlate,
    div,
    exp,
    grid_sample,
    log,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    slice_,
    softmax,
    sub,
    sum_,
    tanh_,
    transpose,
    upsample_bilinear,
)
from .gradcheck import GradCheckReport, grad_check

__all__ = [
    "Tensor", "Tape", "backward", "active_tape", "as_tensor",
    "ShapeError", "NonFiniteError", "TapeError", "set_debug_nan",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose",
    "reshape", "broadcast_to", "concat", "slice_", "sum_", "mean",
    "sigmoid", "tanh_", "relu", "exp", "log", "abs_", "clip", "softmax",
    "conv2d", "conv_transpose2d", "avg_pool2d", "upsample_bilinear",
    "grid_sample", "correlate",
    "grad_check", "GradCheckReport",
]
