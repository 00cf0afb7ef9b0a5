"""
Cost Accounting
===============

Closed-form parameter and forward multiply-accumulate (MAC) counts for a
ModelConfig, checked against the built model and the runtime MAC counter.

Groups:
- embeddings: token table and output projection
- attention: Q/K/V/O projections and biases; score and value products
- norms: layer-norm gains and biases
- ffn: dense FFNs and SMoE experts (k active experts per token for MACs)
- gates: router weights and the shared domain embedding
- adapters: per-domain bottleneck adapters
- output: vocabulary projection MACs

table_flops is the backbone MAC count (attention, ffn, adapters). It
excludes gates and the vocabulary projection and is the figure compared
with published model-size tables. total_macs adds both and equals the
runtime counter exactly; flops = 2 * total_macs.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.errors import CorpusIOError
from ..core.validation import Conditioning, FfnVariant, ModelConfig
from ..model.schema import EOS, DomainSchema
from ..model.transformer import Batch, ForwardMode, build_model
from ..numerics import counting, no_grad

logger = logging.getLogger(__name__)

PARAM_GROUPS = ("embeddings", "attention", "norms", "ffn", "gates", "adapters")
MAC_GROUPS = ("attention", "ffn", "gates", "adapters", "output")
BACKBONE_GROUPS = ("attention", "ffn", "adapters")
TABLE_COLUMNS = ("model", "params", "params_tied", "table_flops", "total_macs", "flops")


@dataclass
class CostReport:
    name: str = ""
    params_by_group: Dict[str, int] = field(default_factory=dict)
    vocab_size: int = 0
    d_model: int = 0
    macs_by_group: Dict[str, int] = field(default_factory=dict)
    src_len: int = 0
    tgt_len: int = 0
    tagged: bool = False
    instrumented_macs: Optional[int] = None

    @property
    def params_total(self) -> int:
        return sum(self.params_by_group.values())

    @property
    def params_tied(self) -> int:
        """Total as if the output projection shared the token table"""
        return self.params_total - self.vocab_size * self.d_model

    @property
    def total_macs(self) -> int:
        return sum(self.macs_by_group.values())

    @property
    def table_flops(self) -> int:
        return sum(self.macs_by_group.get(g, 0) for g in BACKBONE_GROUPS)

    @property
    def flops(self) -> int:
        return 2 * self.total_macs

    @property
    def instrumented_matches(self) -> Optional[bool]:
        if self.instrumented_macs is None:
            return None
        return self.instrumented_macs == self.total_macs

    def merge(self, other: "CostReport") -> "CostReport":
        """Parameter part of self with the MAC part of other"""
        return CostReport(
            name=self.name or other.name,
            params_by_group=dict(self.params_by_group or other.params_by_group),
            vocab_size=self.vocab_size or other.vocab_size,
            d_model=self.d_model or other.d_model,
            macs_by_group=dict(other.macs_by_group or self.macs_by_group),
            src_len=other.src_len,
            tgt_len=other.tgt_len,
            tagged=other.tagged,
            instrumented_macs=other.instrumented_macs,
        )

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.update({
            "params_total": self.params_total,
            "params_tied": self.params_tied,
            "total_macs": self.total_macs,
            "table_flops": self.table_flops,
            "flops": self.flops,
            "instrumented_matches": self.instrumented_matches,
        })
        return payload

    def table_row(self) -> Dict[str, Any]:
        return {
            "model": self.name,
            "params": self.params_total,
            "params_tied": self.params_tied,
            "table_flops": self.table_flops,
            "total_macs": self.total_macs,
            "flops": self.flops,
        }


# =============================================================================
# Parameters
# =============================================================================

def _vocab(cfg: ModelConfig, schema: DomainSchema) -> int:
    return cfg.vocab_size or schema.vocab_size


def _ffn_params(d: int, d_ff: int) -> int:
    return 2 * d * d_ff + d_ff + d


def _gate_params(cfg: ModelConfig, domains: int) -> int:
    d, n = cfg.d_model, cfg.expert_count
    if cfg.conditioning == Conditioning.DOMAIN_AWARE_GATE:
        return 2 * d * n
    if cfg.conditioning == Conditioning.DOMAIN_SPECIALIZED_GATE:
        return domains * d * n
    return d * n


def _layer_ffn_params(cfg: ModelConfig, index: int, domains: int, groups: Dict[str, int]) -> None:
    d, d_ff = cfg.d_model, cfg.d_ff_effective
    extra = cfg.hosts_extra_sublayer(index)
    if extra and cfg.ffn_variant == FfnVariant.SMOE:
        groups["ffn"] += cfg.expert_count * _ffn_params(d, d_ff)
        groups["gates"] += _gate_params(cfg, domains)
    else:
        groups["ffn"] += _ffn_params(d, d_ff)
    if extra and cfg.ffn_variant == FfnVariant.ADAPTERS:
        groups["adapters"] += domains * (2 * d * cfg.adapter_dim + cfg.adapter_dim + d)


def count_params(cfg: ModelConfig, schema: DomainSchema, name: str = "") -> CostReport:
    """Closed-form parameter count per group; equals build_model(cfg, schema).num_parameters()"""
    cfg.validate_consistency()
    d, vocab, domains = cfg.d_model, _vocab(cfg, schema), len(schema)
    attention = 4 * (d * d + d)
    groups = {g: 0 for g in PARAM_GROUPS}
    groups["embeddings"] = 2 * vocab * d
    if cfg.conditioning == Conditioning.DOMAIN_AWARE_GATE:
        groups["gates"] += domains * d

    for i in range(cfg.encoder_layers):
        groups["attention"] += attention
        groups["norms"] += 2 * 2 * d
        _layer_ffn_params(cfg, i, domains, groups)
    for i in range(cfg.decoder_layers):
        groups["attention"] += 2 * attention
        groups["norms"] += 3 * 2 * d
        _layer_ffn_params(cfg, i, domains, groups)
    groups["norms"] += 2 * 2 * d
    return CostReport(name=name, params_by_group=groups, vocab_size=vocab, d_model=d)


# =============================================================================
# Multiply-Accumulates
# =============================================================================

def _gate_width(cfg: ModelConfig) -> int:
    if cfg.conditioning == Conditioning.DOMAIN_AWARE_GATE:
        return 2 * cfg.d_model
    return cfg.d_model


def _layer_ffn_macs(cfg: ModelConfig, index: int, tokens: int, groups: Dict[str, int]) -> None:
    d, d_ff = cfg.d_model, cfg.d_ff_effective
    extra = cfg.hosts_extra_sublayer(index)
    if extra and cfg.ffn_variant == FfnVariant.SMOE:
        groups["ffn"] += cfg.top_k * tokens * 2 * d * d_ff
        groups["gates"] += tokens * _gate_width(cfg) * cfg.expert_count
    else:
        groups["ffn"] += tokens * 2 * d * d_ff
    if extra and cfg.ffn_variant == FfnVariant.ADAPTERS:
        groups["adapters"] += tokens * 2 * d * cfg.adapter_dim


def estimate_flops(
    cfg: ModelConfig,
    schema: DomainSchema,
    src_len: int = 10,
    tgt_len: int = 10,
    tagged: Optional[bool] = None,
    name: str = "",
) -> CostReport:
    """
    MACs of one teacher-forced forward pass over one sentence pair.

    tagged adds the tag position to the source (defaults to whether the
    config conditions on tags). Embedding lookups are not counted.
    """
    cfg.validate_consistency()
    if tagged is None:
        tagged = cfg.conditioning == Conditioning.TAGS
    d = cfg.d_model
    s = src_len + (1 if tagged else 0)
    t = tgt_len
    groups = {g: 0 for g in MAC_GROUPS}
    for i in range(cfg.encoder_layers):
        groups["attention"] += 4 * s * d * d + 2 * s * s * d
        _layer_ffn_macs(cfg, i, s, groups)
    for i in range(cfg.decoder_layers):
        groups["attention"] += 4 * t * d * d + 2 * t * t * d
        groups["attention"] += 2 * t * d * d + 2 * s * d * d + 2 * t * s * d
        _layer_ffn_macs(cfg, i, t, groups)
    groups["output"] = t * d * _vocab(cfg, schema)
    return CostReport(
        name=name, vocab_size=_vocab(cfg, schema), d_model=d,
        macs_by_group=groups, src_len=src_len, tgt_len=tgt_len, tagged=tagged,
    )


def instrumented_macs(cfg: ModelConfig, schema: DomainSchema, src_len: int = 10, tgt_len: int = 10,
                      tagged: Optional[bool] = None) -> int:
    """
    Runtime MAC count of the same forward pass.

    Parameters are read-only zero views, so base-size configs are counted
    without allocating their weights.
    """
    if tagged is None:
        tagged = cfg.conditioning == Conditioning.TAGS
    model = build_model(cfg, schema, zero_views=True)
    content = schema.first_content_id
    source = [content] * (src_len - 1) + [EOS]
    if tagged:
        source = schema.prepend_domain_tag(source, 0)
    target = [content] * (tgt_len - 1) + [EOS]
    batch = Batch(source=np.array([source]), target=np.array([target]), domains=np.array([0]))
    with no_grad(), counting() as counter:
        model.forward(batch, ForwardMode.INFER, trace=False)
    return counter.macs


def cost_report(
    cfg: ModelConfig,
    schema: DomainSchema,
    src_len: int = 10,
    tgt_len: int = 10,
    tagged: Optional[bool] = None,
    instrument: bool = True,
    name: str = "",
) -> CostReport:
    report = count_params(cfg, schema, name).merge(estimate_flops(cfg, schema, src_len, tgt_len, tagged, name))
    if instrument:
        report.instrumented_macs = instrumented_macs(cfg, schema, src_len, tgt_len, report.tagged)
        if not report.instrumented_matches:
            logger.warning(
                f"{name or 'model'}: analytic MACs {report.total_macs} != runtime count {report.instrumented_macs}"
            )
    logger.info(
        f"{name or 'model'}: {report.params_total / 1e6:.1f}M params ({report.params_tied / 1e6:.1f}M tied), "
        f"{report.table_flops / 1e9:.3f}B backbone MACs"
    )
    return report


# =============================================================================
# Output
# =============================================================================

def write_reports_json(path: Union[str, Path], reports: Sequence[CostReport]) -> None:
    try:
        Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise CorpusIOError(path, str(e))


def write_table_csv(path: Union[str, Path], reports: Sequence[CostReport]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(TABLE_COLUMNS), lineterminator="\n")
            writer.writeheader()
            for report in reports:
                writer.writerow(report.table_row())
    except OSError as e:
        raise CorpusIOError(path, str(e))


def format_table(reports: Sequence[CostReport]) -> List[str]:
    lines = [f"{'model':<28}{'params':>10}{'tied':>10}{'FLOPs':>10}{'runtime':>10}"]
    for r in reports:
        check = {None: "-", True: "match", False: "MISMATCH"}[r.instrumented_matches]
        lines.append(
            f"{r.name:<28}{r.params_total / 1e6:>9.1f}M{r.params_tied / 1e6:>9.1f}M"
            f"{r.table_flops / 1e9:>9.3f}B{check:>10}"
        )
    return lines
