from pdvox.tensor.gradcheck import finite_difference_grad, relative_error
from pdvox.tensor.ops import (
    NormState,
    Tensor,
    axis_geometry,
    batch_norm_backward,
    batch_norm_forward,
    check_tensor,
    conv3d_backward,
    conv3d_forward,
    dense_backward,
    dense_forward,
    dropout_backward,
    dropout_forward,
    group_count,
    group_norm_backward,
    group_norm_forward,
    leaky_relu_backward,
    leaky_relu_forward,
    maxpool3d_backward,
    maxpool3d_forward,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_backward,
)
from pdvox.tensor.tape import Tape, Var, backward

__all__ = [
    "finite_difference_grad",
    "relative_error",
    "NormState",
    "Tensor",
    "axis_geometry",
    "batch_norm_backward",
    "batch_norm_forward",
    "check_tensor",
    "conv3d_backward",
    "conv3d_forward",
    "dense_backward",
    "dense_forward",
    "dropout_backward",
    "dropout_forward",
    "group_count",
    "group_norm_backward",
    "group_norm_forward",
    "leaky_relu_backward",
    "leaky_relu_forward",
    "maxpool3d_backward",
    "maxpool3d_forward",
    "softmax",
    "softmax_cross_entropy",
    "softmax_cross_entropy_backward",
    "Tape",
    "Var",
    "backward",
]
