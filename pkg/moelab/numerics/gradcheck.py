"""Central-difference verification of analytic gradients."""

from typing import Callable

import numpy as np

from ..core.errors import ContractError, NumericError
from .tensor import Tensor, no_grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6) -> float:
    """
    Max over coordinates of |analytic - numeric| / (|analytic| + |numeric| + eps).

    f must return a scalar Tensor. x.data is perturbed in place and restored.
    Callers keep x away from non-smooth points (top-k ties, ReLU kinks) by
    more than eps; nothing here masks such points.
    """
    if not x.requires_grad:
        raise ContractError("grad_check needs a tensor with requires_grad=True")
    if not (x.data.flags.c_contiguous and x.data.flags.writeable):
        x.data = np.array(x.data, copy=True)
    x.grad = None
    loss = f(x)
    loss.backward()
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    numeric = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = f(x).item()
            flat[i] = original - eps
            minus = f(x).item()
            flat[i] = original
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise NumericError(f"non-finite value while probing coordinate {i}", details={"coordinate": i})
            numeric.reshape(-1)[i] = (plus - minus) / (2.0 * eps)

    error = np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + eps)
    return float(error.max()) if error.size else 0.0
