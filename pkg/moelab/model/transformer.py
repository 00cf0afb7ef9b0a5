"""
Encoder-Decoder Models
======================

Pre-layer-norm transformer with:
- shared encoder/decoder input embeddings, untied output projection (no bias)
- dense FFN, width-scaled FFN, SMoE or adapter sublayers
- SMoE / adapters at even 1-based layer indices of both stacks
- conditioning by source tags, domain-aware gates or domain-specialized gates
- gate traces for every non-pad token routed through an SMoE layer
"""

import hashlib
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError, DataError, DomainLookupError
from ..core.validation import Conditioning, FfnVariant, ModelConfig
from ..moe.gating import GateParams, GateVariant
from ..moe.layer import SmoeLayer
from ..moe.trace import GateTrace, LayerTrace
from ..nn.layers import (
    AdapterBank,
    AttentionLayer,
    FfnLayer,
    Initializer,
    LayerNorm,
    Module,
    TokenEmbedding,
    causal_mask,
    linear,
)
from ..numerics import ops
from ..numerics.tensor import Tensor, no_grad
from .schema import BOS, PAD, DomainSchema

logger = logging.getLogger(__name__)

GATE_VARIANTS = {
    Conditioning.DOMAIN_AWARE_GATE: GateVariant.DOMAIN_AWARE,
    Conditioning.DOMAIN_SPECIALIZED_GATE: GateVariant.DOMAIN_SPECIALIZED,
}


class ForwardMode(str, Enum):
    TRAIN = "train"
    INFER = "infer"


# =============================================================================
# Batches
# =============================================================================

def pad_sequences(sequences: Sequence[Sequence[int]], width: Optional[int] = None) -> np.ndarray:
    width = max((len(s) for s in sequences), default=0) if width is None else width
    out = np.full((len(sequences), width), PAD, dtype=np.int64)
    for i, seq in enumerate(sequences):
        out[i, : len(seq)] = seq
    return out


def _as_matrix(rows) -> np.ndarray:
    matrix = np.asarray(rows, dtype=np.int64)
    if matrix.ndim == 2:
        return matrix
    return matrix.reshape(len(matrix), -1) if matrix.size else np.zeros((len(matrix), 0), dtype=np.int64)


@dataclass
class Batch:
    """Padded source/target matrices with the domain label of every row"""

    source: np.ndarray   # [B x S], tags already prepended for tag-conditioned models
    target: np.ndarray   # [B x T], content + EOS, PAD-padded
    domains: np.ndarray  # [B] assigned domain ids
    examples: Optional[np.ndarray] = None

    def __post_init__(self):
        self.source = _as_matrix(self.source)
        self.target = _as_matrix(self.target)
        self.domains = np.asarray(self.domains, dtype=np.int64).reshape(-1)
        if self.examples is None:
            self.examples = np.arange(len(self.domains), dtype=np.int64)
        if not len(self.source) == len(self.target) == len(self.domains):
            raise DataError(
                f"batch rows disagree: source {len(self.source)}, target {len(self.target)}, "
                f"domains {len(self.domains)}"
            )

    @property
    def size(self) -> int:
        return len(self.domains)

    @property
    def decoder_input(self) -> np.ndarray:
        shifted = np.full_like(self.target, PAD)
        if self.target.shape[1]:
            shifted[:, 0] = BOS
            shifted[:, 1:] = self.target[:, :-1]
        return shifted

    @property
    def num_target_tokens(self) -> int:
        return int((self.target != PAD).sum())

    def digest(self) -> str:
        h = hashlib.sha1()
        for array in (self.source, self.target, self.domains):
            h.update(np.ascontiguousarray(array).tobytes())
        return h.hexdigest()[:16]


@dataclass
class _Pass:
    """Per-forward bookkeeping shared by the layers of one stack"""

    domains: np.ndarray
    examples: np.ndarray
    pad: np.ndarray
    training: bool
    trace: Optional[GateTrace]
    record_from: int = 0
    collect_balance: bool = False
    aux: List[Tensor] = field(default_factory=list)


# =============================================================================
# Layers
# =============================================================================

class _Block(Module):
    """FFN part shared by encoder and decoder layers"""

    def __init__(self, cfg: ModelConfig, key: str, index: int, init: Initializer,
                 schema: DomainSchema, domain_embedding: Optional[Tensor]):
        super().__init__()
        self.key = key
        self.dropout = cfg.dropout
        self.rng: Optional[np.random.Generator] = None
        self.gate_uses_domains = cfg.conditioning in GATE_VARIANTS
        self.norm_ffn = self.add_module("norm_ffn", LayerNorm(cfg.d_model, init))
        self.smoe: Optional[SmoeLayer] = None
        self.ffn: Optional[FfnLayer] = None
        self.adapters: Optional[AdapterBank] = None
        extra = cfg.hosts_extra_sublayer(index)
        if extra and cfg.ffn_variant == FfnVariant.SMOE:
            gate = GateParams(
                GATE_VARIANTS.get(cfg.conditioning, GateVariant.STANDARD),
                cfg.d_model, cfg.expert_count, cfg.top_k, init,
                domain_names=schema.names, domain_embedding=domain_embedding,
            )
            self.smoe = self.add_module("smoe", SmoeLayer(cfg.d_model, cfg.d_ff_effective, gate, init))
        else:
            self.ffn = self.add_module("ffn", FfnLayer(cfg.d_model, cfg.d_ff_effective, init))
        if extra and cfg.ffn_variant == FfnVariant.ADAPTERS:
            self.adapters = self.add_module(
                "adapters", AdapterBank(schema.names, cfg.d_model, cfg.adapter_dim, init)
            )

    def _drop(self, x: Tensor, ctx: _Pass) -> Tensor:
        return ops.dropout(x, self.dropout, ctx.training, self.rng)

    def feed_forward(self, h: Tensor, ctx: _Pass) -> Tensor:
        batch, length, d_model = h.shape
        z = self.norm_ffn(h)
        token_domains = np.repeat(ctx.domains, length)
        if self.smoe is not None:
            flat = ops.reshape(z, (batch * length, d_model))
            result = self.smoe(flat, token_domains if self.gate_uses_domains else None,
                               with_balance=ctx.collect_balance, balance_mask=~ctx.pad.reshape(-1))
            if ctx.trace is not None:
                positions = np.tile(np.arange(length), batch)
                keep = ~ctx.pad.reshape(-1) & (positions >= ctx.record_from)
                ctx.trace.add(LayerTrace(
                    layer=self.key,
                    examples=np.repeat(ctx.examples, length)[keep],
                    positions=positions[keep],
                    domains=token_domains[keep],
                    dist=result.dist[keep],
                    indices=result.indices[keep],
                    weights=result.weights[keep],
                ))
            if result.balance is not None:
                ctx.aux.append(result.balance)
            y = ops.reshape(result.output, (batch, length, d_model))
        else:
            y = self.ffn(z)
        h = ops.add(h, self._drop(y, ctx))
        if self.adapters is not None:
            flat = self.adapters(ops.reshape(h, (batch * length, d_model)), token_domains)
            h = ops.reshape(flat, (batch, length, d_model))
        return h


class EncoderLayer(_Block):
    def __init__(self, cfg, key, index, init, schema, domain_embedding):
        super().__init__(cfg, key, index, init, schema, domain_embedding)
        self.norm_attn = self.add_module("norm_attn", LayerNorm(cfg.d_model, init))
        self.attn = self.add_module("attn", AttentionLayer(cfg.d_model, cfg.heads, init))

    def __call__(self, x: Tensor, mask: np.ndarray, ctx: _Pass) -> Tensor:
        z = self.norm_attn(x)
        x = ops.add(x, self._drop(self.attn(z, z, z, mask), ctx))
        return self.feed_forward(x, ctx)


class DecoderLayer(_Block):
    def __init__(self, cfg, key, index, init, schema, domain_embedding):
        super().__init__(cfg, key, index, init, schema, domain_embedding)
        self.norm_self = self.add_module("norm_self", LayerNorm(cfg.d_model, init))
        self.self_attn = self.add_module("self_attn", AttentionLayer(cfg.d_model, cfg.heads, init))
        self.norm_cross = self.add_module("norm_cross", LayerNorm(cfg.d_model, init))
        self.cross_attn = self.add_module("cross_attn", AttentionLayer(cfg.d_model, cfg.heads, init))

    def __call__(self, y: Tensor, memory: Tensor, self_mask: np.ndarray, cross_mask: np.ndarray, ctx: _Pass) -> Tensor:
        z = self.norm_self(y)
        y = ops.add(y, self._drop(self.self_attn(z, z, z, self_mask), ctx))
        z = self.norm_cross(y)
        y = ops.add(y, self._drop(self.cross_attn(z, memory, memory, cross_mask), ctx))
        return self.feed_forward(y, ctx)


# =============================================================================
# Model
# =============================================================================

@dataclass
class DecodeState:
    """Encoder output and labels for an in-progress greedy decode"""

    memory: Tensor
    source_pad: np.ndarray
    domains: np.ndarray
    examples: np.ndarray
    trace: Optional[GateTrace]


class Seq2SeqModel(Module):
    """Encoder-decoder over a DomainSchema's vocabulary"""

    def __init__(self, cfg: ModelConfig, schema: DomainSchema, init: Initializer):
        super().__init__()
        cfg.validate_consistency()
        if cfg.vocab_size and cfg.vocab_size < schema.vocab_size:
            raise ConfigError(
                "vocabulary too small for the schema",
                violations=[f"vocab_size {cfg.vocab_size} < required {schema.vocab_size}"],
            )
        self.cfg = cfg
        self.schema = schema
        self.vocab_size = cfg.vocab_size or schema.vocab_size
        d = cfg.d_model

        self.embedding = self.add_module("embedding", TokenEmbedding(self.vocab_size, d, init))
        self.domain_embedding: Optional[Tensor] = None
        if cfg.conditioning == Conditioning.DOMAIN_AWARE_GATE:
            self.domain_embedding = self.add_param("domain_embedding", init.normal((len(schema), d), d ** -0.5))

        self.encoder_layers: List[EncoderLayer] = [
            self.add_module(f"encoder.{i}", EncoderLayer(cfg, f"encoder.{i + 1}", i, init, schema, self.domain_embedding))
            for i in range(cfg.encoder_layers)
        ]
        self.encoder_norm = self.add_module("encoder_norm", LayerNorm(d, init))
        self.decoder_layers: List[DecoderLayer] = [
            self.add_module(f"decoder.{i}", DecoderLayer(cfg, f"decoder.{i + 1}", i, init, schema, self.domain_embedding))
            for i in range(cfg.decoder_layers)
        ]
        self.decoder_norm = self.add_module("decoder_norm", LayerNorm(d, init))
        self.W_out = self.add_param("W_out", init.xavier(d, self.vocab_size))

        self.dropout_rng = np.random.default_rng(cfg.seed + 1)
        for layer in self.encoder_layers + self.decoder_layers:
            layer.rng = self.dropout_rng

    # -------------------------------------------------------------------------
    # Introspection
    # -------------------------------------------------------------------------

    @property
    def smoe_layers(self) -> List[SmoeLayer]:
        return [l.smoe for l in self.encoder_layers + self.decoder_layers if l.smoe is not None]

    @property
    def smoe_layer_keys(self) -> List[str]:
        return [l.key for l in self.encoder_layers + self.decoder_layers if l.smoe is not None]

    @property
    def adapter_banks(self) -> List[AdapterBank]:
        return [l.adapters for l in self.encoder_layers + self.decoder_layers if l.adapters is not None]

    @property
    def uses_tags(self) -> bool:
        return self.cfg.conditioning == Conditioning.TAGS

    @property
    def uses_domain_label(self) -> bool:
        """Whether the assigned label can change the output"""
        return self.cfg.conditioning != Conditioning.NONE or self.cfg.ffn_variant == FfnVariant.ADAPTERS

    def prepare_source(self, source: Sequence[int], domain: int) -> List[int]:
        """Source as this model consumes it (tag prepended for tag conditioning)"""
        if self.uses_tags:
            return self.schema.prepend_domain_tag(source, domain)
        self.schema.index(domain)
        return list(source)

    def reset_counters(self) -> None:
        for layer in self.smoe_layers:
            layer.reset_counters()

    # -------------------------------------------------------------------------
    # Validation
    # -------------------------------------------------------------------------

    def _check_tokens(self, matrix: np.ndarray, name: str) -> None:
        bad = np.argwhere((matrix < 0) | (matrix >= self.vocab_size))
        if bad.size:
            row, col = (int(v) for v in bad[0])
            raise DataError(
                f"{name} token {int(matrix[row, col])} outside vocabulary [0, {self.vocab_size}) at row {row}, col {col}",
                coordinates={"matrix": name, "row": row, "col": col},
            )

    def _check_domains(self, domains: np.ndarray) -> None:
        bad = domains[(domains < 0) | (domains >= len(self.schema))]
        if bad.size:
            raise DomainLookupError(int(bad[0]), self.schema.names)

    # -------------------------------------------------------------------------
    # Passes
    # -------------------------------------------------------------------------

    def encode(self, source: np.ndarray, ctx: _Pass) -> Tensor:
        batch, length = source.shape
        x = ops.dropout(self.embedding(source), self.cfg.dropout, ctx.training, self.dropout_rng)
        mask = np.broadcast_to(ctx.pad[:, None, :], (batch, length, length))
        for layer in self.encoder_layers:
            x = layer(x, mask, ctx)
        return self.encoder_norm(x)

    def decode(self, decoder_input: np.ndarray, memory: Tensor, source_pad: np.ndarray, ctx: _Pass) -> Tensor:
        batch, length = decoder_input.shape
        y = ops.dropout(self.embedding(decoder_input), self.cfg.dropout, ctx.training, self.dropout_rng)
        self_mask = causal_mask(batch, length) | ctx.pad[:, None, :]
        cross_mask = np.broadcast_to(source_pad[:, None, :], (batch, length, source_pad.shape[1]))
        for layer in self.decoder_layers:
            y = layer(y, memory, self_mask, cross_mask, ctx)
        return linear(self.decoder_norm(y), self.W_out)

    def forward(
        self,
        batch: Batch,
        mode: ForwardMode = ForwardMode.TRAIN,
        trace: bool = True,
        return_aux: bool = False,
    ):
        """
        Teacher-forced pass: (logits [B x T x V], GateTrace).

        With return_aux the importance-balancing penalty summed over SMoE
        layers (or None) is returned as a third element.
        """
        mode = ForwardMode(mode)
        training = mode == ForwardMode.TRAIN
        gate_trace = GateTrace() if trace else None
        self._check_tokens(batch.source, "source")
        self._check_tokens(batch.target, "target")
        self._check_domains(batch.domains)

        decoder_input = batch.decoder_input
        if batch.size == 0:
            logits = Tensor(np.zeros((0, decoder_input.shape[1], self.vocab_size)))
            return (logits, gate_trace, None) if return_aux else (logits, gate_trace)

        source_pad = batch.source == PAD
        collect = training and self.cfg.balance_coefficient > 0
        enc_ctx = _Pass(batch.domains, batch.examples, source_pad, training, gate_trace, collect_balance=collect)
        memory = self.encode(batch.source, enc_ctx)
        dec_ctx = _Pass(batch.domains, batch.examples, batch.target == PAD, training, gate_trace,
                        collect_balance=collect)
        logits = self.decode(decoder_input, memory, source_pad, dec_ctx)

        if not return_aux:
            return logits, gate_trace
        aux_terms = enc_ctx.aux + dec_ctx.aux
        aux = None
        for term in aux_terms:
            aux = term if aux is None else ops.add(aux, term)
        return logits, gate_trace, aux

    __call__ = forward

    # -------------------------------------------------------------------------
    # Step-wise decoding
    # -------------------------------------------------------------------------

    def start_decoding(
        self,
        sources: Sequence[Sequence[int]],
        domains: Sequence[int],
        examples: Optional[Sequence[int]] = None,
        trace: bool = False,
    ) -> DecodeState:
        """Encode prepared sources once; trace collects encoder routing when requested"""
        source = pad_sequences(sources)
        domains = np.asarray(domains, dtype=np.int64)
        examples = np.arange(len(domains), dtype=np.int64) if examples is None else np.asarray(examples, dtype=np.int64)
        self._check_tokens(source, "source")
        self._check_domains(domains)
        gate_trace = GateTrace() if trace else None
        with no_grad():
            ctx = _Pass(domains, examples, source == PAD, False, gate_trace)
            memory = self.encode(source, ctx)
        return DecodeState(memory, source == PAD, domains, examples, gate_trace)

    def next_token_logits(self, state: DecodeState, prefix: np.ndarray) -> np.ndarray:
        """
        Logits [B x V] for the position after prefix [B x t] (prefix starts with BOS).

        The decoder reruns over the whole prefix; no key/value state is kept
        between steps, so only the last position is added to the trace.
        """
        prefix = np.asarray(prefix, dtype=np.int64)
        with no_grad():
            ctx = _Pass(state.domains, state.examples, prefix == PAD, False, state.trace,
                        record_from=prefix.shape[1] - 1)
            logits = self.decode(prefix, state.memory, state.source_pad, ctx)
        return logits.data[:, -1, :]


def build_model(cfg: ModelConfig, schema: DomainSchema, seed: Optional[int] = None,
                zero_views: bool = False) -> Seq2SeqModel:
    """Deterministic initialization from seed (cfg.seed when omitted)"""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    model = Seq2SeqModel(cfg, schema, Initializer(rng, zero_views=zero_views))
    logger.debug(
        f"Built {cfg.ffn_variant.value} model: {model.num_parameters()} parameters, "
        f"{len(model.smoe_layers)} SMoE layers, {len(model.adapter_banks)} adapter sites"
    )
    return model


def forward(model: Seq2SeqModel, batch: Batch, mode: ForwardMode = ForwardMode.TRAIN) -> Tuple[Tensor, GateTrace]:
    return model.forward(batch, mode)
