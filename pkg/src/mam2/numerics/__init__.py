"""Dense tensors with tape-based reverse-mode autodiff on top of numpy."""

from .gradcheck import (GradCheckResult, check_gradients, finite_difference,
                        max_elementwise_relative_error, relative_error)
from .ops import (add, broadcast_to, concat, cross_entropy, exp, gelu, getitem, layer_norm, log,
                  log_softmax, matmul, mean, mul, neg, reshape, select, softmax, squared_norm_mean,
                  stop_gradient, sub, sum, sum_lastdim, swapaxes, transpose)
from .tensor import (Tensor, as_tensor, backward, default_dtype, grad_enabled, no_grad, precision,
                     zero_grad)

__all__ = [
    "Tensor", "as_tensor", "backward", "default_dtype", "grad_enabled", "no_grad", "precision",
    "zero_grad", "add", "broadcast_to", "concat", "cross_entropy", "exp", "gelu", "getitem",
    "layer_norm", "log", "log_softmax", "matmul", "mean", "mul", "neg", "reshape", "select",
    "softmax", "squared_norm_mean", "stop_gradient", "sub", "sum", "sum_lastdim", "swapaxes",
    "transpose", "GradCheckResult", "check_gradients", "finite_difference",
    "max_elementwise_relative_error", "relative_error",
]
