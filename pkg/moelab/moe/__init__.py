"""Gating mechanisms, the sparse mixture-of-experts layer and routing traces."""

from .gating import (
    GateParams,
    GateVariant,
    gate_domain_aware,
    gate_domain_specialized,
    gate_standard,
    route,
    top_k_select,
)
from .layer import MixtureOutput, SmoeLayer, mixture_forward, smoe_forward
from .trace import GateTrace, LayerTrace

__all__ = [
    "GateParams",
    "GateTrace",
    "GateVariant",
    "LayerTrace",
    "MixtureOutput",
    "SmoeLayer",
    "gate_domain_aware",
    "gate_domain_specialized",
    "gate_standard",
    "mixture_forward",
    "route",
    "smoe_forward",
    "top_k_select",
]
