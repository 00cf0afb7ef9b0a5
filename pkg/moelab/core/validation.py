"""
Configuration Validation Module
===============================

Typed, validated hyperparameter models:
- ModelConfig (architecture, FFN variant, gating, conditioning)
- TrainConfig (optimizer, schedule, checkpointing)
- DataConfig (synthetic task family, split sizes, mixture)
- Cross-field checks collected into a single ConfigError
"""

from enum import Enum
from typing import Any, Dict, List, Tuple, Type

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError


# =============================================================================
# Enums
# =============================================================================

class FfnVariant(str, Enum):
    DENSE = "dense"
    SMOE = "smoe"
    ADAPTERS = "adapters"


class Conditioning(str, Enum):
    NONE = "none"
    TAGS = "tags"
    DOMAIN_AWARE_GATE = "domain-aware-gate"
    DOMAIN_SPECIALIZED_GATE = "domain-specialized-gate"


class ExpertPlacement(str, Enum):
    EVERY_SECOND_LAYER = "every-second-layer"


class MixtureMode(str, Enum):
    BALANCED = "balanced"        # generic at generic_share, seen domains by size
    NATURAL = "natural"          # every domain by size
    SEEN_ONLY = "seen_only"
    GENERIC_ONLY = "generic_only"


class Precision(str, Enum):
    FLOAT64 = "float64"
    FLOAT32 = "float32"


GATE_CONDITIONINGS = (Conditioning.DOMAIN_AWARE_GATE, Conditioning.DOMAIN_SPECIALIZED_GATE)


# =============================================================================
# Model Configuration
# =============================================================================

class ModelConfig(BaseModel):
    """Architecture of one encoder-decoder variant"""

    model_config = ConfigDict(frozen=True, extra="forbid", use_enum_values=False)

    d_model: int = Field(default=32, ge=1, description="Residual stream width")
    d_ff: int = Field(default=64, ge=1, description="Base FFN inner width (before width_multiplier)")
    encoder_layers: int = Field(default=2, ge=1, description="Encoder depth")
    decoder_layers: int = Field(default=2, ge=1, description="Decoder depth")
    heads: int = Field(default=4, ge=1, description="Attention heads")
    vocab_size: int = Field(default=0, ge=0, description="Vocabulary size; 0 sizes it to the domain schema")
    ffn_variant: FfnVariant = Field(default=FfnVariant.DENSE, description="dense | smoe | adapters")
    width_multiplier: float = Field(default=1.0, gt=0, description="Scales d_ff only (dense variant)")
    expert_count: int = Field(default=4, ge=1, description="Experts per SMoE layer")
    top_k: int = Field(default=2, ge=1, description="Active experts per token")
    expert_placement: ExpertPlacement = Field(default=ExpertPlacement.EVERY_SECOND_LAYER)
    adapter_dim: int = Field(default=64, ge=1, description="Adapter bottleneck width")
    conditioning: Conditioning = Field(default=Conditioning.NONE)
    dr_probability: float = Field(default=0.0, ge=0.0, le=1.0, description="Domain randomization probability")
    balance_coefficient: float = Field(default=0.0, ge=0.0, description="Importance-balancing penalty weight")
    dropout: float = Field(default=0.0, ge=0.0, lt=1.0, description="Residual dropout rate")
    seed: int = Field(default=1, ge=0, description="Initialization and training seed")

    @property
    def d_ff_effective(self) -> int:
        return int(round(self.d_ff * self.width_multiplier))

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    def hosts_extra_sublayer(self, layer_index: int) -> bool:
        """Even 1-based layer indices host SMoE or adapter sublayers"""
        return self.ffn_variant != FfnVariant.DENSE and (layer_index + 1) % 2 == 0

    def extra_layer_count(self) -> int:
        return sum(
            self.hosts_extra_sublayer(i)
            for depth in (self.encoder_layers, self.decoder_layers)
            for i in range(depth)
        )

    def violations(self) -> List[str]:
        """Every cross-field constraint this config breaks"""
        problems = []
        if self.d_model % self.heads != 0:
            problems.append(f"heads ({self.heads}) must divide d_model ({self.d_model})")
        if self.conditioning in GATE_CONDITIONINGS and self.ffn_variant != FfnVariant.SMOE:
            problems.append(f"conditioning {self.conditioning.value} requires ffn_variant smoe")
        if self.width_multiplier != 1.0 and self.ffn_variant != FfnVariant.DENSE:
            problems.append("width_multiplier applies to the dense variant only")
        if abs(self.d_ff * self.width_multiplier - self.d_ff_effective) > 1e-9:
            problems.append(f"d_ff x width_multiplier ({self.d_ff} x {self.width_multiplier}) is not an integer")
        if self.ffn_variant == FfnVariant.SMOE and self.top_k > self.expert_count:
            problems.append(f"top_k ({self.top_k}) exceeds expert_count ({self.expert_count})")
        return problems

    def validate_consistency(self) -> "ModelConfig":
        problems = self.violations()
        if problems:
            raise ConfigError("inconsistent model configuration", violations=problems)
        return self


# =============================================================================
# Training Configuration
# =============================================================================

class TrainConfig(BaseModel):
    """Optimizer, schedule and checkpointing"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_steps: int = Field(default=2000, ge=0)
    batch_tokens: int = Field(default=256, ge=1, description="Source tokens per micro-batch")
    accumulation_steps: int = Field(default=1, ge=1)
    lr_max: float = Field(default=1e-3, gt=0)
    warmup_steps: int = Field(default=400, ge=1)
    adam_beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(default=0.98, ge=0.0, lt=1.0)
    adam_epsilon: float = Field(default=1e-9, gt=0)
    label_smoothing: float = Field(default=0.1, ge=0.0, lt=1.0)
    seed: int = Field(default=1, ge=0)
    eval_every: int = Field(default=200, ge=0, description="0 evaluates only after the last step")
    eval_examples: int = Field(default=100, ge=1, description="Validation examples per domain at each eval")
    checkpoint_path: str = Field(default="checkpoint.npz")


# =============================================================================
# Data Configuration
# =============================================================================

SEEN_DOMAIN_NAMES = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta")


class DataConfig(BaseModel):
    """Synthetic multi-domain task family and mixture"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    seen_domains: int = Field(default=4, ge=1, le=len(SEEN_DOMAIN_NAMES))
    range_size: int = Field(default=6, ge=1, description="Tokens per domain-owned range")
    shared_size: int = Field(default=6, ge=1, description="Tokens in the shared ambiguous range")
    unseen_related: bool = Field(default=True, description="Add an unseen domain related to the first seen one")
    min_len: int = Field(default=3, ge=1)
    max_len: int = Field(default=8, ge=1)
    train_examples: int = Field(default=2000, ge=0, description="Training examples per seen domain")
    generic_examples: int = Field(default=4000, ge=0, description="Training examples for the generic domain")
    valid_examples: int = Field(default=100, ge=0)
    test_examples: int = Field(default=200, ge=0)
    mixture: MixtureMode = Field(default=MixtureMode.BALANCED)
    generic_share: float = Field(default=0.5, ge=0.0, le=1.0)
    data_seed: int = Field(default=7, ge=0)

    @field_validator("max_len")
    @classmethod
    def validate_lengths(cls, v: int, info) -> int:
        min_len = info.data.get("min_len")
        if min_len is not None and v < min_len:
            raise ValueError(f"max_len ({v}) must be >= min_len ({min_len})")
        return v

    @property
    def seen_names(self) -> Tuple[str, ...]:
        return SEEN_DOMAIN_NAMES[: self.seen_domains]


# =============================================================================
# Helpers
# =============================================================================

def build_validated(model: Type[BaseModel], values: Dict[str, Any]) -> Any:
    """Construct a pydantic model, converting validation failures to ConfigError"""
    try:
        return model(**values)
    except ValidationError as e:
        problems = [f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors()]
        raise ConfigError(f"invalid {model.__name__}", violations=problems) from e
