"""
Gating Mechanisms
=================

Routers producing a distribution over N experts for every token:
- standard:            softmax(x_t W_g)
- domain-aware:        softmax([x_t ; e_d] W_g) with a shared domain-embedding table
- domain-specialized:  softmax(x_t W_g^d) with one matrix per domain

Gate projections carry no bias.  top_k_select picks the k largest
entries (lowest index wins ties) and renormalizes them to sum to 1.
"""

from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, ContractError, DomainLookupError
from ..nn.layers import Initializer, Module, linear
from ..numerics import ops
from ..numerics.tensor import Tensor


class GateVariant(str, Enum):
    STANDARD = "standard"
    DOMAIN_AWARE = "domain-aware"
    DOMAIN_SPECIALIZED = "domain-specialized"


class GateParams(Module):
    """
    Router weights for one SMoE layer.

    domain_embedding may be shared between layers; when it is supplied
    the gate does not register it as its own parameter.
    """

    def __init__(
        self,
        variant: GateVariant,
        d_model: int,
        expert_count: int,
        top_k: int,
        init: Initializer,
        domain_names: Sequence[str] = (),
        domain_embedding: Optional[Tensor] = None,
    ):
        super().__init__()
        if not 1 <= top_k <= expert_count:
            raise ConfigError(f"top_k must lie in [1, {expert_count}], got {top_k}")
        self.variant = GateVariant(variant)
        self.d_model = d_model
        self.expert_count = expert_count
        self.top_k = top_k
        self.domain_names = list(domain_names)
        self.domain_embedding = domain_embedding
        self.W_g: Optional[Tensor] = None
        self.W_g_domain = []

        if self.variant == GateVariant.STANDARD:
            self.W_g = self.add_param("W_g", init.xavier(d_model, expert_count))
        elif self.variant == GateVariant.DOMAIN_AWARE:
            if not self.domain_names:
                raise ConfigError("domain-aware gate needs the schema's domains")
            if self.domain_embedding is None:
                self.domain_embedding = self.add_param(
                    "domain_embedding", init.normal((len(self.domain_names), d_model), d_model ** -0.5)
                )
            d_emb = self.domain_embedding.shape[1]
            self.W_g = self.add_param("W_g", init.xavier(d_model + d_emb, expert_count))
        else:
            if not self.domain_names:
                raise ConfigError("domain-specialized gate needs the schema's domains")
            self.W_g_domain = [
                self.add_param(f"W_g.{name}", init.xavier(d_model, expert_count)) for name in self.domain_names
            ]

    @property
    def d_emb(self) -> int:
        return 0 if self.domain_embedding is None else self.domain_embedding.shape[1]

    def _check_domains(self, domains: np.ndarray) -> None:
        bad = domains[(domains < 0) | (domains >= len(self.domain_names))]
        if bad.size:
            raise DomainLookupError(int(bad[0]), self.domain_names)

    def logits(self, x: Tensor, domains: Optional[np.ndarray]) -> Tensor:
        """Gate logits [n x N] for token rows x [n x d_model]"""
        if self.variant == GateVariant.STANDARD:
            return linear(x, self.W_g)
        if domains is None:
            raise ContractError(f"{self.variant.value} gate needs domain ids")
        domains = np.asarray(domains, dtype=np.int64)
        self._check_domains(domains)
        if self.variant == GateVariant.DOMAIN_AWARE:
            embedded = ops.embedding(self.domain_embedding, domains)
            return linear(ops.concat([x, embedded], axis=1), self.W_g)
        present = np.unique(domains)
        if len(present) == 1:
            return linear(x, self.W_g_domain[int(present[0])])
        out = None
        for domain in present:
            rows = np.flatnonzero(domains == domain)
            part = ops.scatter_add_rows(
                linear(ops.take_rows(x, rows), self.W_g_domain[int(domain)]), rows, x.shape[0]
            )
            out = part if out is None else ops.add(out, part)
        return out if out is not None else linear(x, self.W_g_domain[0])


def route(x: Tensor, domains: Optional[np.ndarray], gate: GateParams) -> Tuple[Tensor, Tensor]:
    """(logits, distribution) for token rows"""
    logits = gate.logits(x, domains)
    return logits, ops.softmax(logits, axis=-1)


def _single_token(x_t: Tensor, d: Optional[int], gate: GateParams, variant: GateVariant) -> Tensor:
    if gate.variant != variant:
        raise ContractError(f"gate variant is {gate.variant.value}, expected {variant.value}")
    x = ops.reshape(x_t, (1, x_t.shape[-1])) if x_t.ndim == 1 else x_t
    domains = None if d is None else np.full(x.shape[0], d, dtype=np.int64)
    _, dist = route(x, domains, gate)
    return ops.reshape(dist, (gate.expert_count,)) if x_t.ndim == 1 else dist


def gate_standard(x_t: Tensor, gate: GateParams) -> Tensor:
    return _single_token(x_t, None, gate, GateVariant.STANDARD)


def gate_domain_aware(x_t: Tensor, d: int, gate: GateParams) -> Tensor:
    return _single_token(x_t, d, gate, GateVariant.DOMAIN_AWARE)


def gate_domain_specialized(x_t: Tensor, d: int, gate: GateParams) -> Tensor:
    return _single_token(x_t, d, gate, GateVariant.DOMAIN_SPECIALIZED)


def top_k_select(dist: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of the k largest entries (descending, lowest index on ties) and renormalized weights"""
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[-1]
    if not 1 <= k <= n:
        raise ContractError(f"k must lie in [1, {n}], got {k}")
    indices = np.argsort(-dist, axis=-1, kind="stable")[..., :k]
    selected = np.take_along_axis(dist, indices, axis=-1)
    return indices, selected / selected.sum(axis=-1, keepdims=True)
