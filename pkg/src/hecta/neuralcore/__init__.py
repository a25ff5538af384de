"""Minimal differentiable-computation core: layers with manual backward
passes, RMSprop, gradient clipping, finite-difference checks and checkpoints."""
from .kernels import BACKEND
from .layers import (
    ConvBlock, Conv2d, Dense, GRUCell, MaxPool2, ReLU, Kink,
    conv_block_forward, conv_block_backward, conv_out_shape,
    gru_forward, gru_backward, gru_step, kink_margin,
)
from .gradcheck import GradCheckReport, grad_check, numeric_grad, rel_error
from .optim import RMSprop, clip_grad_norm, global_norm, rmsprop_step
from .params import (
    check_finite, copy_params, dumps_params, load_params, loads_params,
    params_equal, save_params, zeros_like,
)

__all__ = [
    "BACKEND", "ConvBlock", "Conv2d", "Dense", "GRUCell", "MaxPool2", "ReLU", "Kink",
    "conv_block_forward", "conv_block_backward", "conv_out_shape",
    "gru_forward", "gru_backward", "gru_step", "kink_margin",
    "GradCheckReport", "grad_check", "numeric_grad", "rel_error",
    "RMSprop", "clip_grad_norm", "global_norm", "rmsprop_step",
    "check_finite", "copy_params", "dumps_params", "load_params", "loads_params",
    "params_equal", "save_params", "zeros_like",
]
