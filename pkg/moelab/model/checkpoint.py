"""
Checkpoints
===========

One .npz per checkpoint:
- "header": JSON (format, model config, experiment echo, schema + hash,
  step, RNG states, stream state, optimizer step)
- "param/<name>", "adam_m/<name>", "adam_v/<name>": little-endian float64

Written to a temporary file in the target directory, then renamed.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from ..core.errors import CompatibilityError, CorpusIOError, DataError
from ..core.logging_config import timed
from ..core.validation import ModelConfig
from .schema import DomainSchema
from .transformer import Seq2SeqModel, build_model

logger = logging.getLogger(__name__)

FORMAT = "moelab-checkpoint/1"
LE_F8 = np.dtype("<f8")


@dataclass
class Checkpoint:
    header: Dict[str, Any]
    params: Dict[str, np.ndarray]
    adam_m: Dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.header["step"])

    @property
    def schema_hash(self) -> str:
        return self.header["schema_hash"]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.header["model_config"])

    @property
    def schema(self) -> DomainSchema:
        return DomainSchema.from_dict(self.header["schema"])

    def verify_schema(self, expected_hash: str) -> None:
        if expected_hash != self.schema_hash:
            raise CompatibilityError(expected=expected_hash, found=self.schema_hash)


@timed(logger)
def save_checkpoint(
    path: Union[str, Path],
    model: Seq2SeqModel,
    step: int,
    adam_m: Optional[Dict[str, np.ndarray]] = None,
    adam_v: Optional[Dict[str, np.ndarray]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Atomically write model parameters, optimizer moments and a JSON header"""
    path = Path(path)
    header = {
        "format": FORMAT,
        "model_config": model.cfg.model_dump(mode="json"),
        "schema": model.schema.to_dict(),
        "schema_hash": model.schema.schema_hash(),
        "step": int(step),
        "dropout_rng": model.dropout_rng.bit_generator.state,
    }
    header.update(extra or {})
    arrays = {"header": np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)}
    for name, tensor in model.named_parameters():
        arrays[f"param/{name}"] = np.ascontiguousarray(tensor.data, dtype=LE_F8)
    for prefix, moments in (("adam_m", adam_m or {}), ("adam_v", adam_v or {})):
        for name, value in moments.items():
            arrays[f"{prefix}/{name}"] = np.ascontiguousarray(value, dtype=LE_F8)

    directory = path.parent if str(path.parent) else Path(".")
    try:
        directory.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=directory)
        try:
            with os.fdopen(fd, "wb") as handle:
                np.savez(handle, **arrays)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise CorpusIOError(path, f"cannot write checkpoint: {e}")
    logger.info(f"Wrote checkpoint {path} at step {step}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode("utf-8"))
            groups: Dict[str, Dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
            for key in data.files:
                prefix, _, name = key.partition("/")
                if prefix in groups:
                    groups[prefix][name] = data[key]
    except (OSError, KeyError, ValueError) as e:
        raise CorpusIOError(path, f"cannot read checkpoint: {e}")
    if header.get("format") != FORMAT:
        raise DataError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
    return Checkpoint(header, groups["param"], groups["adam_m"], groups["adam_v"])


def restore_model(checkpoint: Checkpoint) -> Seq2SeqModel:
    """Rebuild the architecture from the header and load parameter values"""
    model = build_model(checkpoint.model_config, checkpoint.schema)
    load_parameters(model, checkpoint.params)
    if "dropout_rng" in checkpoint.header:
        model.dropout_rng.bit_generator.state = checkpoint.header["dropout_rng"]
    return model


def load_parameters(model: Seq2SeqModel, params: Dict[str, np.ndarray]) -> None:
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(params))
    unexpected = sorted(set(params) - set(named))
    if missing or unexpected:
        raise DataError(f"checkpoint parameters do not match the model (missing {missing[:5]}, unexpected {unexpected[:5]})")
    for name, tensor in named.items():
        value = params[name]
        if value.shape != tensor.shape:
            raise DataError(f"parameter {name} has shape {value.shape}, model expects {tensor.shape}")
        tensor.data = np.array(value, dtype=tensor.data.dtype)
