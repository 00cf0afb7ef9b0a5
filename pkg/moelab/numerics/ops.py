"""
Differentiable Operations
=========================

Every op computes its forward with numpy and registers a backward closure
mapping the output gradient to one gradient per input (None to skip).

Broadcasting is limited to trailing-axis bias addition (add_bias); every
other binary op requires identical shapes.  matmul and bmm are the only
ops that feed the multiply-accumulate counter.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ContractError, DimensionError
from .tensor import Tensor, count_macs, stochastic_rng

Axis = Optional[Union[int, Tuple[int, ...]]]


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"axis {axis} invalid for tensor", x.shape)
    return axis % x.ndim


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} needs equal shapes", a.shape, b.shape)


# =============================================================================
# Matrix Products (counted)
# =============================================================================

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """[m x k] @ [k x n]; counts m*k*n multiply-accumulates"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError("matmul inner extents differ", a.shape, b.shape)
    m, k = a.shape
    n = b.shape[1]
    count_macs("matmul", m * k * n)

    def backward(g):
        return (
            g @ b.data.T if a.requires_grad else None,
            a.data.T @ g if b.requires_grad else None,
        )

    return Tensor.from_op(a.data @ b.data, (a, b), "matmul", backward)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched [B x m x k] @ [B x k x n]; counts B*m*k*n multiply-accumulates"""
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise DimensionError("bmm shapes incompatible", a.shape, b.shape)
    batch, m, k = a.shape
    count_macs("bmm", batch * m * k * b.shape[2])

    def backward(g):
        return (
            g @ np.swapaxes(b.data, 1, 2) if a.requires_grad else None,
            np.swapaxes(a.data, 1, 2) @ g if b.requires_grad else None,
        )

    return Tensor.from_op(np.matmul(a.data, b.data), (a, b), "bmm", backward)


# =============================================================================
# Elementwise
# =============================================================================

def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return Tensor.from_op(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("sub", a, b)
    return Tensor.from_op(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("mul", a, b)

    def backward(g):
        return (g * b.data if a.requires_grad else None, g * a.data if b.requires_grad else None)

    return Tensor.from_op(a.data * b.data, (a, b), "mul", backward)


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """x[..., n] + bias[n]"""
    if bias.ndim != 1 or x.ndim == 0 or x.shape[-1] != bias.shape[0]:
        raise DimensionError("bias must match the trailing axis", x.shape, bias.shape)

    def backward(g):
        return g, g.reshape(-1, bias.shape[0]).sum(axis=0) if bias.requires_grad else None

    return Tensor.from_op(x.data + bias.data, (x, bias), "add_bias", backward)


def scale(x: Tensor, c: float) -> Tensor:
    return Tensor.from_op(x.data * c, (x,), "scale", lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,), "relu", lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), "exp", lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), "log", lambda g: (g / x.data,))


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Replace entries where mask is True; mask must match x exactly"""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise DimensionError("mask shape differs from input", mask.shape, x.shape)
    keep = ~mask
    out = np.where(mask, value, x.data).astype(x.data.dtype)
    return Tensor.from_op(out, (x,), "masked_fill", lambda g: (g * keep,))


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not training or rate <= 0.0:
        return x
    rng = rng or stochastic_rng()
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor.from_op(x.data * keep, (x,), "dropout", lambda g: (g * keep,))


# =============================================================================
# Reductions
# =============================================================================

def sum(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    if isinstance(axis, int):
        axis = _axis(x, axis)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return Tensor.from_op(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), "sum", backward)


def mean(x: Tensor, axis: Axis = None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[_axis(x, a)] for a in axes]))
    return scale(sum(x, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (x,), "softmax", backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _axis(x, axis)
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * np.sum(g, axis=axis, keepdims=True),)

    return Tensor.from_op(out, (x,), "log_softmax", backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the trailing axis to mean 0, variance 1, then gamma * xhat + beta"""
    width = x.shape[-1] if x.ndim else 0
    if gamma.shape != (width,) or beta.shape != (width,):
        raise DimensionError("layer norm affine parameters must match the trailing axis", x.shape, gamma.shape)
    mu = np.mean(x.data, axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    out = xhat * gamma.data + beta.data

    def backward(g):
        lead = g.reshape(-1, width)
        dgamma = (lead * xhat.reshape(-1, width)).sum(axis=0) if gamma.requires_grad else None
        dbeta = lead.sum(axis=0) if beta.requires_grad else None
        dx = None
        if x.requires_grad:
            dxhat = g * gamma.data
            dx = rstd * (
                dxhat
                - np.mean(dxhat, axis=-1, keepdims=True)
                - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
            )
        return dx, dgamma, dbeta

    return Tensor.from_op(out, (x, gamma, beta), "layer_norm", backward)


# =============================================================================
# Shape Ops
# =============================================================================

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError("cannot reshape", original, tuple(shape))
    return Tensor.from_op(out, (x,), "reshape", lambda g: (g.reshape(original),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % max(x.ndim, 1) for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"axes {axes} are not a permutation", x.shape)
    inverse = tuple(np.argsort(axes))
    return Tensor.from_op(np.transpose(x.data, axes), (x,), "transpose", lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    axis = _axis(tensors[0], axis)
    for t in tensors[1:]:
        if t.ndim != tensors[0].ndim or any(
            t.shape[i] != tensors[0].shape[i] for i in range(t.ndim) if i != axis
        ):
            raise DimensionError("concat shapes differ off the joined axis", tensors[0].shape, t.shape)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat", backward)


# =============================================================================
# Gathers and Scatters
# =============================================================================

def take(x: Tensor, key) -> Tensor:
    """Numpy indexing x[key]; gradient scattered back with add.at"""

    def backward(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, key, g)
        return (grad,)

    return Tensor.from_op(x.data[key], (x,), "take", backward)


def take_rows(x: Tensor, rows: np.ndarray) -> Tensor:
    return take(x, np.asarray(rows, dtype=np.int64))


def take_along(x: Tensor, index: np.ndarray) -> Tensor:
    """x [n x m], index [n x j] -> x[i, index[i, :]]"""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError("take_along needs matching leading extents", x.shape, index.shape)
    return take(x, (np.arange(x.shape[0])[:, None], index))


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Rows of table [V x d] at integer ids of any shape -> ids.shape + (d,)"""
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise DimensionError("embedding table must be 2-D", table.shape)
    return take(table, ids)


def scatter_add_rows(src: Tensor, rows: np.ndarray, n: int) -> Tensor:
    """out [n x d] with out[rows[i]] += src[i]"""
    rows = np.asarray(rows, dtype=np.int64)
    if src.ndim != 2 or rows.shape != (src.shape[0],):
        raise DimensionError("scatter rows must index the leading axis", src.shape, rows.shape)
    out = np.zeros((n, src.shape[1]), dtype=src.data.dtype)
    np.add.at(out, rows, src.data)
    return Tensor.from_op(out, (src,), "scatter_add_rows", lambda g: (g[rows],))


def mul_rows(x: Tensor, w: Tensor) -> Tensor:
    """x [n x d] with row i scaled by w[i]"""
    if x.ndim != 2 or w.shape != (x.shape[0],):
        raise DimensionError("row weights must match the leading axis", x.shape, w.shape)

    def backward(g):
        return (
            g * w.data[:, None] if x.requires_grad else None,
            np.sum(g * x.data, axis=1) if w.requires_grad else None,
        )

    return Tensor.from_op(x.data * w.data[:, None], (x, w), "mul_rows", backward)


# =============================================================================
# Losses
# =============================================================================

def cross_entropy(
    logits: Tensor,
    targets: np.ndarray,
    pad_id: int = 0,
    label_smoothing: float = 0.0,
    normalizer: Optional[float] = None,
) -> Tensor:
    """
    Label-smoothed cross-entropy over [n x V] logits, pads masked out.

    The summed token loss is divided by normalizer (default: the number of
    non-pad targets), so accumulated micro-batches can share one divisor.
    """
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise DimensionError("logits rows must match targets", logits.shape, targets.shape)
    vocab = logits.shape[1]
    keep = (targets != pad_id).astype(logits.data.dtype)
    if normalizer is None:
        normalizer = float(keep.sum())
    logp = log_softmax(logits, axis=-1)
    picked = reshape(take_along(logp, targets[:, None]), (targets.shape[0],))
    per_token = scale(picked, -(1.0 - label_smoothing))
    if label_smoothing > 0.0:
        per_token = add(per_token, scale(sum(logp, axis=1), -label_smoothing / vocab))
    masked = mul(per_token, Tensor(keep))
    return scale(sum(masked), 1.0 / max(normalizer, 1.0))
