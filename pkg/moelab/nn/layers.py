"""
Transformer Building Blocks
===========================

Parameterized layers over the tensor engine:
- Module: named parameter/submodule registry
- Initializer: seeded Xavier/normal init, or zero views for cost probing
- FfnLayer, LayerNorm, AttentionLayer, Adapter/AdapterBank
- Token embeddings with sinusoidal positions
"""

import logging
import math
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import DimensionError, DomainLookupError
from ..numerics import ops
from ..numerics.tensor import Tensor, get_default_dtype

logger = logging.getLogger(__name__)


# =============================================================================
# Parameter Registry
# =============================================================================

class Initializer:
    """Seeded parameter factory; zero_views allocates nothing (read-only zero views)"""

    def __init__(self, rng: np.random.Generator, zero_views: bool = False):
        self.rng = rng
        self.zero_views = zero_views

    def _zeros_view(self, shape: Tuple[int, ...]) -> np.ndarray:
        return np.broadcast_to(np.zeros((), dtype=get_default_dtype()), shape)

    def xavier(self, fan_in: int, fan_out: int) -> np.ndarray:
        if self.zero_views:
            return self._zeros_view((fan_in, fan_out))
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-limit, limit, size=(fan_in, fan_out))

    def normal(self, shape: Tuple[int, ...], std: float) -> np.ndarray:
        if self.zero_views:
            return self._zeros_view(shape)
        return self.rng.normal(0.0, std, size=shape)

    def zeros(self, *shape: int) -> np.ndarray:
        return self._zeros_view(shape) if self.zero_views else np.zeros(shape)

    def ones(self, *shape: int) -> np.ndarray:
        return self._zeros_view(shape) if self.zero_views else np.ones(shape)


class Module:
    """Base class holding named parameters and child modules in insertion order"""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}
        self._modules: Dict[str, "Module"] = {}
        self.training = True

    def add_param(self, name: str, data: np.ndarray) -> Tensor:
        tensor = Tensor(data, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def add_module(self, name: str, module: "Module") -> "Module":
        self._modules[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, tensor in self._params.items():
            yield f"{prefix}{name}", tensor
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> List[Tensor]:
        return [t for _, t in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self.parameters())

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for module in self._modules.values():
            module.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x[..., in] @ weight[in x out] (+ bias), leading axes preserved"""
    fan_in, fan_out = weight.shape
    if x.shape[-1] != fan_in:
        raise DimensionError("input width does not match weight", x.shape, weight.shape)
    lead = x.shape[:-1]
    out = ops.matmul(ops.reshape(x, (-1, fan_in)) if x.ndim != 2 else x, weight)
    if bias is not None:
        out = ops.add_bias(out, bias)
    return ops.reshape(out, lead + (fan_out,)) if x.ndim != 2 else out


# =============================================================================
# Position-wise FFN
# =============================================================================

class FfnLayer(Module):
    """W2 relu(W1 x + b1) + b2; also the expert type of SMoE layers"""

    def __init__(self, d_model: int, d_ff: int, init: Initializer):
        super().__init__()
        self.d_model = d_model
        self.d_ff = d_ff
        self.W1 = self.add_param("W1", init.xavier(d_model, d_ff))
        self.b1 = self.add_param("b1", init.zeros(d_ff))
        self.W2 = self.add_param("W2", init.xavier(d_ff, d_model))
        self.b2 = self.add_param("b2", init.zeros(d_model))

    @staticmethod
    def parameter_count(d_model: int, d_ff: int) -> int:
        return 2 * d_model * d_ff + d_ff + d_model

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise DimensionError("ffn input width mismatch", x.shape, (self.d_model,))
        return linear(ops.relu(linear(x, self.W1, self.b1)), self.W2, self.b2)


def ffn_forward(layer: FfnLayer, x: Tensor) -> Tensor:
    return layer(x)


class LayerNorm(Module):
    def __init__(self, d_model: int, init: Initializer, eps: float = 1e-12):
        super().__init__()
        self.eps = eps
        self.gamma = self.add_param("gamma", init.ones(d_model))
        self.beta = self.add_param("beta", init.zeros(d_model))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)


# =============================================================================
# Multi-head Attention
# =============================================================================

class AttentionLayer(Module):
    """
    Scaled dot-product attention over h heads of width d_model / h.

    mask is boolean [B x Tq x Tk] with True marking positions that must
    receive zero weight.
    """

    MASK_VALUE = -1e9

    def __init__(self, d_model: int, heads: int, init: Initializer):
        super().__init__()
        if d_model % heads != 0:
            raise DimensionError(f"heads ({heads}) must divide d_model ({d_model})", (d_model,), (heads,))
        self.d_model = d_model
        self.heads = heads
        self.head_dim = d_model // heads
        for name in ("q", "k", "v", "o"):
            setattr(self, f"W{name}", self.add_param(f"W{name}", init.xavier(d_model, d_model)))
            setattr(self, f"b{name}", self.add_param(f"b{name}", init.zeros(d_model)))
        self.last_weights: Optional[np.ndarray] = None

    def _split_heads(self, x: Tensor, batch: int, length: int) -> Tensor:
        x = ops.reshape(x, (batch, length, self.heads, self.head_dim))
        x = ops.transpose(x, (0, 2, 1, 3))
        return ops.reshape(x, (batch * self.heads, length, self.head_dim))

    def __call__(self, queries: Tensor, keys: Tensor, values: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        batch, tq, _ = queries.shape
        tk = keys.shape[1]
        if keys.shape != values.shape or keys.shape[0] != batch:
            raise DimensionError("keys and values must share shape and batch", keys.shape, values.shape)
        if mask is not None and np.shape(mask) != (batch, tq, tk):
            raise DimensionError("attention mask shape mismatch", np.shape(mask), (batch, tq, tk))

        q = self._split_heads(linear(queries, self.Wq, self.bq), batch, tq)
        k = self._split_heads(linear(keys, self.Wk, self.bk), batch, tk)
        v = self._split_heads(linear(values, self.Wv, self.bv), batch, tk)

        scores = ops.scale(ops.bmm(q, ops.transpose(k, (0, 2, 1))), 1.0 / math.sqrt(self.head_dim))
        scores = ops.reshape(scores, (batch, self.heads, tq, tk))
        if mask is not None:
            full = np.broadcast_to(np.asarray(mask, dtype=bool)[:, None, :, :], scores.shape)
            scores = ops.masked_fill(scores, full, self.MASK_VALUE)
        weights = ops.softmax(scores, axis=-1)
        self.last_weights = weights.data

        context = ops.bmm(ops.reshape(weights, (batch * self.heads, tq, tk)), v)
        context = ops.reshape(context, (batch, self.heads, tq, self.head_dim))
        context = ops.reshape(ops.transpose(context, (0, 2, 1, 3)), (batch, tq, self.d_model))
        return linear(context, self.Wo, self.bo)


def attention_forward(
    layer: AttentionLayer, queries: Tensor, keys: Tensor, values: Tensor, mask: Optional[np.ndarray] = None
) -> Tensor:
    return layer(queries, keys, values, mask)


def causal_mask(batch: int, length: int) -> np.ndarray:
    """True above the diagonal: position t may not attend to positions > t"""
    upper = np.triu(np.ones((length, length), dtype=bool), k=1)
    return np.broadcast_to(upper, (batch, length, length))


# =============================================================================
# Residual Adapters
# =============================================================================

class Adapter(Module):
    """x + Up(relu(Down x))"""

    def __init__(self, d_model: int, d_adapter: int, init: Initializer):
        super().__init__()
        self.d_model = d_model
        self.Down = self.add_param("Down", init.xavier(d_model, d_adapter))
        self.b_down = self.add_param("b_down", init.zeros(d_adapter))
        self.Up = self.add_param("Up", init.xavier(d_adapter, d_model))
        self.b_up = self.add_param("b_up", init.zeros(d_model))

    @staticmethod
    def parameter_count(d_model: int, d_adapter: int) -> int:
        return 2 * d_model * d_adapter + d_adapter + d_model

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_model:
            raise DimensionError("adapter input width mismatch", x.shape, (self.d_model,))
        hidden = ops.relu(linear(x, self.Down, self.b_down))
        return ops.add(x, linear(hidden, self.Up, self.b_up))


class AdapterBank(Module):
    """One adapter per schema domain; rows are routed by their domain id"""

    def __init__(self, domain_names: Sequence[str], d_model: int, d_adapter: int, init: Initializer):
        super().__init__()
        self.domain_names = list(domain_names)
        self.d_adapter = d_adapter
        self.adapters = [
            self.add_module(name, Adapter(d_model, d_adapter, init)) for name in self.domain_names
        ]

    def adapter(self, domain: int) -> Adapter:
        if not 0 <= domain < len(self.adapters):
            raise DomainLookupError(domain, range(len(self.adapters)))
        return self.adapters[domain]

    def __call__(self, x: Tensor, domains: np.ndarray) -> Tensor:
        """x [n x d], domains [n] -> each row through its own domain's adapter"""
        domains = np.asarray(domains, dtype=np.int64)
        present = np.unique(domains)
        for domain in present:
            self.adapter(int(domain))
        if len(present) == 1:
            return self.adapters[int(present[0])](x)
        out = None
        for domain in present:
            rows = np.flatnonzero(domains == domain)
            part = ops.scatter_add_rows(self.adapters[int(domain)](ops.take_rows(x, rows)), rows, x.shape[0])
            out = part if out is None else ops.add(out, part)
        if out is None:
            return x
        return out


def adapter_forward(bank: AdapterBank, x: Tensor, domain: int) -> Tensor:
    return bank.adapter(domain)(x)


# =============================================================================
# Embeddings
# =============================================================================

def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (2 * (np.arange(d_model) // 2)) / d_model)
    angles = positions * rates[None, :]
    table = np.where(np.arange(d_model) % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(get_default_dtype())


class TokenEmbedding(Module):
    """Shared token table scaled by sqrt(d_model), plus sinusoidal positions"""

    def __init__(self, vocab_size: int, d_model: int, init: Initializer):
        super().__init__()
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.table = self.add_param("table", init.normal((vocab_size, d_model), d_model ** -0.5))

    def __call__(self, ids: np.ndarray, offset: int = 0) -> Tensor:
        batch, length = ids.shape
        tokens = ops.scale(ops.embedding(self.table, ids), math.sqrt(self.d_model))
        positions = sinusoidal_positions(offset + length, self.d_model)[offset:]
        return ops.add(tokens, Tensor(np.broadcast_to(positions, (batch, length, self.d_model))))
