"""Dense numpy tensors with reverse-mode differentiation."""

from . import ops
from .gradcheck import GradCheckReport, ParameterCheck, grad_check, relative_error
from .tensor import (
    Graph,
    Tensor,
    as_tensor,
    backward,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "GradCheckReport",
    "Graph",
    "ParameterCheck",
    "Tensor",
    "as_tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "grad_check",
    "is_grad_enabled",
    "no_grad",
    "ops",
    "relative_error",
    "set_default_dtype",
]
