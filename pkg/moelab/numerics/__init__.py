"""Deterministic dense tensors with reverse-mode differentiation."""

from .gradcheck import grad_check
from .tensor import (
    ComputationTape,
    MacCounter,
    Tensor,
    counting,
    get_default_dtype,
    get_default_precision,
    grad_enabled,
    no_grad,
    seed_stochastic,
    set_debug_checks,
    set_default_dtype,
)

__all__ = [
    "ComputationTape",
    "MacCounter",
    "Tensor",
    "counting",
    "get_default_dtype",
    "get_default_precision",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "seed_stochastic",
    "set_debug_checks",
    "set_default_dtype",
]
