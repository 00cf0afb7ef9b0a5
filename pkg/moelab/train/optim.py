"""
Optimizer and Schedule
======================

- lr_schedule: linear warmup, then inverse square root decay
- AdamState / adam_step: bias-corrected Adam over named parameters
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from ..core.errors import ConfigError, ContractError, DimensionError
from ..numerics import Tensor

ParamLike = Union[Tensor, np.ndarray]


def lr_schedule(step: int, lr_max: float, warmup: int) -> float:
    """lr_max * min(step / warmup, sqrt(warmup / step)); zero at step 0"""
    if step < 0:
        raise ContractError(f"step must be non-negative, got {step}")
    if warmup < 1 or lr_max <= 0:
        raise ConfigError(f"invalid schedule: lr_max={lr_max}, warmup={warmup}")
    if step == 0:
        return 0.0
    return lr_max * min(step / warmup, math.sqrt(warmup / step))


@dataclass
class AdamState:
    """First/second moments keyed by parameter name, plus the update count"""

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def _array(value: ParamLike) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else value


def adam_step(
    params: Mapping[str, ParamLike],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.98),
    eps: float = 1e-9,
) -> AdamState:
    """
    One Adam update in place.

    Parameters without a gradient keep their value; their moments still
    decay. Moments are created lazily as zeros of the parameter's shape.
    """
    beta1, beta2 = betas
    state.t += 1
    correction1 = 1.0 - beta1 ** state.t
    correction2 = 1.0 - beta2 ** state.t

    for name, param in params.items():
        value = _array(param)
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(value)
        elif grad.shape != value.shape:
            raise DimensionError(f"gradient for {name} does not match parameter", grad.shape, value.shape)

        m = state.m.setdefault(name, np.zeros_like(value))
        v = state.v.setdefault(name, np.zeros_like(value))
        if m.shape != value.shape or v.shape != value.shape:
            raise DimensionError(f"optimizer state for {name} does not match parameter", m.shape, value.shape)

        m *= beta1
        m += (1.0 - beta1) * grad
        v *= beta2
        v += (1.0 - beta2) * grad * grad
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)

        if isinstance(param, Tensor):
            param.data = (value - update).astype(value.dtype, copy=False)
        else:
            value -= update
    return state
