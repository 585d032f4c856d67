"""Small reverse-mode autodiff core: tensors, layers, losses, Adam."""

from .functional import conv1d, conv_output_length, pad1d, pool1d
from .gradcheck import analytic_gradient, check_gradients, finite_diff_gradient, relative_error
from .layers import ParamSet, activate, dense_forward, glorot_uniform
from .losses import EPS_CLIP, bce_elementwise, bce_loss, class_weights
from .optim import AdamState, adam_step
from .tensor import Tensor, as_tensor

__all__ = [
    "AdamState", "EPS_CLIP", "ParamSet", "Tensor", "activate", "adam_step", "analytic_gradient",
    "as_tensor", "bce_elementwise", "bce_loss", "check_gradients", "class_weights", "conv1d",
    "conv_output_length", "dense_forward", "finite_diff_gradient", "glorot_uniform", "pad1d",
    "pool1d", "relative_error",
]
