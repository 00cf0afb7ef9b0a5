"""
Sparse Mixture-of-Experts Layer
===============================

y_t = sum over the top-k experts E of w_{t,i} E_i(x_t), where w are the
selected gate entries renormalized to sum to 1.

Only selected experts run, each on the subset of tokens routed to it.
Per-rank outputs are accumulated rank 0 first, so permuting experts
together with gate columns reproduces the output bit for bit.
"""

import logging
import threading
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, DimensionError
from ..nn.layers import FfnLayer, Initializer, Module
from ..numerics import ops
from ..numerics.tensor import Tensor
from .gating import GateParams, route, top_k_select
from .trace import LayerTrace

logger = logging.getLogger(__name__)


@dataclass
class MixtureOutput:
    output: Tensor              # [n x d_model]
    dist: np.ndarray            # [n x N] full gate distribution
    indices: np.ndarray         # [n x k]
    weights: np.ndarray         # [n x k] renormalized
    balance: Optional[Tensor]   # squared CV of per-expert gate mass, when requested
    evaluations: int            # expert-token evaluations performed


def mixture_forward(
    x: Tensor,
    domains: Optional[np.ndarray],
    gate: GateParams,
    experts: Sequence[FfnLayer],
    with_balance: bool = False,
    balance_mask: Optional[np.ndarray] = None,
) -> MixtureOutput:
    """
    Route token rows x [n x d_model] through their top-k experts.

    balance_mask [n] selects the rows counted by the balance penalty
    (padding excluded); all rows count when it is None.
    """
    if len(experts) != gate.expert_count:
        raise ConfigError(f"gate expects {gate.expert_count} experts, got {len(experts)}")
    n, d_model = x.shape
    k = gate.top_k
    if balance_mask is not None and np.shape(balance_mask) != (n,):
        raise DimensionError("balance mask must have one entry per row", np.shape(balance_mask), (n,))

    logits, dist = route(x, domains, gate)
    indices, renormalized = top_k_select(dist.data, k)
    # softmax over the selected logits equals the renormalized selected entries
    weights = ops.softmax(ops.take_along(logits, indices), axis=-1)

    output = None
    evaluations = 0
    for rank in range(k):
        rank_weight = ops.reshape(ops.take_along(weights, np.full((n, 1), rank)), (n,))
        chosen = indices[:, rank]
        for expert_id in np.unique(chosen):
            rows = np.flatnonzero(chosen == expert_id)
            expert_out = experts[int(expert_id)](ops.take_rows(x, rows))
            part = ops.scatter_add_rows(ops.mul_rows(expert_out, ops.take_rows(rank_weight, rows)), rows, n)
            output = part if output is None else ops.add(output, part)
            evaluations += len(rows)
    if output is None:
        output = Tensor(np.zeros((n, d_model), dtype=x.data.dtype))

    balance = None
    counted = np.arange(n) if balance_mask is None else np.flatnonzero(balance_mask)
    if with_balance and counted.size:
        rows = dist if counted.size == n else ops.take_rows(dist, counted)
        importance = ops.sum(rows, axis=0)
        m = float(counted.size)
        squared = ops.scale(ops.sum(ops.mul(importance, importance)), gate.expert_count / (m * m))
        balance = ops.add(squared, Tensor(-1.0))

    return MixtureOutput(output, dist.data, indices, weights.data.copy() if n else renormalized, balance, evaluations)


def smoe_forward(
    x_t: Tensor, d: Optional[int], gate: GateParams, experts: Sequence[FfnLayer], position: int = 0
) -> Tuple[Tensor, LayerTrace]:
    """Single-token SMoE: (y_t, trace entry)"""
    x = ops.reshape(x_t, (1, x_t.shape[-1]))
    domains = None if d is None else np.array([d], dtype=np.int64)
    result = mixture_forward(x, domains, gate, experts)
    entry = LayerTrace(
        layer="token",
        examples=np.zeros(1, dtype=np.int64),
        positions=np.array([position], dtype=np.int64),
        domains=np.array([-1 if d is None else d], dtype=np.int64),
        dist=result.dist,
        indices=result.indices,
        weights=result.weights,
    )
    return ops.reshape(result.output, (x_t.shape[-1],)), entry


class SmoeLayer(Module):
    """N expert FFNs behind a gate; counts expert-token evaluations"""

    def __init__(self, d_model: int, d_ff: int, gate: GateParams, init: Initializer):
        super().__init__()
        self.gate = self.add_module("gate", gate)
        self.experts: List[FfnLayer] = [
            self.add_module(f"expert{i}", FfnLayer(d_model, d_ff, init)) for i in range(gate.expert_count)
        ]
        self.evaluations = 0
        self._lock = threading.Lock()

    def reset_counters(self) -> None:
        with self._lock:
            self.evaluations = 0

    def __call__(
        self,
        x: Tensor,
        domains: Optional[np.ndarray],
        with_balance: bool = False,
        balance_mask: Optional[np.ndarray] = None,
    ) -> MixtureOutput:
        result = mixture_forward(
            x, domains, self.gate, self.experts, with_balance=with_balance, balance_mask=balance_mask
        )
        with self._lock:
            self.evaluations += result.evaluations
        return result
