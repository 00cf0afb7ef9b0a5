"""Transformer building blocks."""

from .layers import (
    Adapter,
    AdapterBank,
    AttentionLayer,
    FfnLayer,
    Initializer,
    LayerNorm,
    Module,
    TokenEmbedding,
    adapter_forward,
    attention_forward,
    causal_mask,
    ffn_forward,
    linear,
    sinusoidal_positions,
)

__all__ = [
    "Adapter",
    "AdapterBank",
    "AttentionLayer",
    "FfnLayer",
    "Initializer",
    "LayerNorm",
    "Module",
    "TokenEmbedding",
    "adapter_forward",
    "attention_forward",
    "causal_mask",
    "ffn_forward",
    "linear",
    "sinusoidal_positions",
]
