"""Dense-tensor core: reverse-mode autodiff, optimizers, schedules, checkpoints."""

from .core import (
    Tensor,
    add,
    clip_min,
    collect_grads,
    constant,
    default_dtype,
    div,
    exp,
    gelu,
    layer_norm,
    l2_normalize,
    log,
    log_softmax,
    matmul,
    mean,
    min_along,
    mul,
    neg,
    param,
    reshape,
    scatter_along,
    set_debug_nan,
    set_default_dtype,
    softmax,
    sqrt,
    stop_gradient,
    sub,
    sum_,
    take_along,
    transpose,
    using_dtype,
)
from .optim import AdamW, LrSchedule, clip_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck

__all__ = [
    "AdamW",
    "LrSchedule",
    "Tensor",
    "add",
    "clip_grad_norm",
    "clip_min",
    "collect_grads",
    "constant",
    "default_dtype",
    "div",
    "exp",
    "gelu",
    "gradcheck",
    "layer_norm",
    "l2_normalize",
    "load_checkpoint",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "min_along",
    "mul",
    "neg",
    "param",
    "reshape",
    "save_checkpoint",
    "scatter_along",
    "set_debug_nan",
    "set_default_dtype",
    "softmax",
    "sqrt",
    "stop_gradient",
    "sub",
    "sum_",
    "take_along",
    "transpose",
    "using_dtype",
]
