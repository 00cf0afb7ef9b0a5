"""
Experiment Configuration
========================

Flat `key = value` files binding one model variant, its training regime
and its data mixture.  One file per experiment keeps the difference
between two variants a one-line diff.

Format:
- one assignment per line, `#` starts a comment, blank lines ignored
- keys are the field names of ModelConfig, TrainConfig and DataConfig plus
  `name`; a key present in several sections (`seed`) sets all of them
- unknown keys, repeated keys and malformed lines are errors
- every key has a default; emit() writes all of them in a fixed order
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Type, Union

from pydantic import BaseModel

from .core.errors import ConfigError, CorpusIOError
from .core.validation import DataConfig, ModelConfig, TrainConfig, build_validated

logger = logging.getLogger(__name__)

SECTIONS: Tuple[Tuple[str, Type[BaseModel]], ...] = (
    ("model", ModelConfig),
    ("train", TrainConfig),
    ("data", DataConfig),
)


def _key_owners() -> Dict[str, List[str]]:
    owners: Dict[str, List[str]] = {}
    for section, model in SECTIONS:
        for key in model.model_fields:
            owners.setdefault(key, []).append(section)
    return owners


KEY_OWNERS = _key_owners()
KNOWN_KEYS = ["name"] + list(KEY_OWNERS)


def format_value(value: Any) -> str:
    if hasattr(value, "value"):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "experiment"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    # -------------------------------------------------------------------------
    # Construction
    # -------------------------------------------------------------------------

    @classmethod
    def from_values(cls, values: Mapping[str, str], default_seed: Optional[int] = None) -> "ExperimentConfig":
        unknown = sorted(set(values) - set(KNOWN_KEYS))
        if unknown:
            raise ConfigError("unknown configuration keys", violations=[f"unknown key: {k}" for k in unknown])
        sections: Dict[str, Dict[str, Any]] = {section: {} for section, _ in SECTIONS}
        if default_seed is not None and "seed" not in values:
            for section in KEY_OWNERS["seed"]:
                sections[section]["seed"] = default_seed
        for key, value in values.items():
            if key == "name":
                continue
            for section in KEY_OWNERS[key]:
                sections[section][key] = value

        problems: List[str] = []
        built: Dict[str, Any] = {}
        for section, model in SECTIONS:
            try:
                built[section] = build_validated(model, sections[section])
            except ConfigError as e:
                problems.extend(e.violations)
        if not problems:
            problems.extend(built["model"].violations())
        if problems:
            raise ConfigError("invalid experiment configuration", violations=problems)
        return cls(name=values.get("name", "experiment"), **built)

    @classmethod
    def parse(cls, text: str, source: str = "<string>", default_seed: Optional[int] = None) -> "ExperimentConfig":
        values: Dict[str, str] = {}
        problems: List[str] = []
        for number, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or not key or " " in key:
                problems.append(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
                continue
            if key in values:
                problems.append(f"{source}:{number}: key {key} assigned twice")
                continue
            values[key] = value.strip()
        if problems:
            raise ConfigError("malformed experiment configuration", violations=problems)
        return cls.from_values(values, default_seed)

    @classmethod
    def load(cls, path: Union[str, Path], default_seed: Optional[int] = None) -> "ExperimentConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise CorpusIOError(path, str(e))
        config = cls.parse(text, str(path), default_seed)
        logger.info(f"Loaded experiment {config.name} from {path}")
        return config

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        values = self.values()
        values.update({k: format_value(v) for k, v in overrides.items()})
        return ExperimentConfig.from_values(values)

    # -------------------------------------------------------------------------
    # Output
    # -------------------------------------------------------------------------

    def values(self) -> Dict[str, str]:
        """Every key with its formatted value, in emit order"""
        out = {"name": self.name}
        for section, model in SECTIONS:
            config = getattr(self, section)
            for key in model.model_fields:
                out.setdefault(key, format_value(getattr(config, key)))
        return out

    def emit(self) -> str:
        lines = []
        current = None
        for key, value in self.values().items():
            section = KEY_OWNERS.get(key, ["experiment"])[0]
            if section != current:
                if current is not None:
                    lines.append("")
                lines.append(f"# {section}")
                current = section
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        try:
            Path(path).write_text(self.emit(), encoding="utf-8")
        except OSError as e:
            raise CorpusIOError(path, str(e))
