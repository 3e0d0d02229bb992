"""Minimal tensor library with reverse-mode autodiff and the layers the
blockage predictor needs."""

from .tensor import (Tensor, as_tensor, no_grad, grad_enabled, set_check_finite,
                     add, sub, mul, neg, matmul, transpose, reshape,
                     tsum, tmean, relu, sigmoid, tanh,
                     select_step, vstack_rows, slice_rows)
from .layers import (dense_forward, conv2d_forward, maxpool2d,
                     BatchNormState, batchnorm2d, dropout,
                     GruCellParams, gru_cell, gru_cell_precomputed,
                     softmax, softmax_cross_entropy)
from .optim import AdamState, adam_step
from .gradcheck import grad_check

__all__ = [
    "Tensor", "as_tensor", "no_grad", "grad_enabled", "set_check_finite",
    "add", "sub", "mul", "neg", "matmul", "transpose", "reshape",
    "tsum", "tmean", "relu", "sigmoid", "tanh",
    "select_step", "vstack_rows", "slice_rows",
    "dense_forward", "conv2d_forward", "maxpool2d",
    "BatchNormState", "batchnorm2d", "dropout",
    "GruCellParams", "gru_cell", "gru_cell_precomputed",
    "softmax", "softmax_cross_entropy",
    "AdamState", "adam_step", "grad_check",
]
