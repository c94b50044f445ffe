"""Minimal numpy tensor engine with reverse-mode differentiation."""

from . import functional
from .functional import ShapeError
from .gradcheck import grad_check
from .nn import LayerNorm, Linear, Module, Parameter
from .optim import AdamW
from .tensor import (
    Tensor,
    as_tensor,
    default_dtype,
    get_default_dtype,
    is_grad_enabled,
    make_op,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "AdamW",
    "LayerNorm",
    "Linear",
    "Module",
    "Parameter",
    "ShapeError",
    "Tensor",
    "as_tensor",
    "default_dtype",
    "functional",
    "get_default_dtype",
    "grad_check",
    "is_grad_enabled",
    "make_op",
    "no_grad",
    "set_default_dtype",
]
