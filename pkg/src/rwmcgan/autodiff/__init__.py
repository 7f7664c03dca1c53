from . import ops
from .gradcheck import grad_check
from .ops import (
    BatchNormState,
    activation,
    affine,
    batchnorm2d,
    bce_with_logits,
    concat,
    conv2d,
    conv2d_transpose,
    leaky_relu,
    relu,
    sigmoid,
    softmax,
    softmax_cross_entropy,
    tanh,
)
from .optim import AdamState, adam_step
from .tensor import Tape, Tensor, backward

__all__ = [
    "AdamState", "BatchNormState", "Tape", "Tensor", "activation", "adam_step", "affine",
    "backward", "batchnorm2d", "bce_with_logits", "concat", "conv2d", "conv2d_transpose",
    "grad_check", "leaky_relu", "ops", "relu", "sigmoid", "softmax", "softmax_cross_entropy", "tanh",
]
