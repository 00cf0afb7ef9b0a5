"""
Training Loop
=============

Optimizer updates over token-budget micro-batches:
- gradient accumulation with one shared normalizer (target tokens of the group)
- label-smoothed cross-entropy plus the optional balance penalty
- per-domain teacher-forced validation accuracy every eval_every steps
- metric log CSV (step, lr, loss, accuracy per schema domain)
- atomic checkpoints carrying optimizer, stream and dropout state, so a
  resumed run matches a continuous one bit for bit
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from ..core.errors import ConfigError, CorpusIOError, NumericError
from ..core.logging_config import perf_logger, update_context
from ..core.monitoring import TrainingMetrics
from ..core.validation import TrainConfig
from ..data.sampling import TokenBatcher, TrainingStream, make_batch
from ..data.tasks import Example
from ..evaluation.metrics import token_accuracy
from ..model.checkpoint import Checkpoint, load_parameters, save_checkpoint
from ..model.schema import PAD
from ..model.transformer import Batch, ForwardMode, Seq2SeqModel
from ..numerics import ops
from .optim import AdamState, adam_step, lr_schedule

logger = logging.getLogger(__name__)

METRICS_LOG = "metrics.csv"
PathLike = Union[str, Path]


@dataclass
class TrainResult:
    checkpoint_path: Path
    metrics_path: Optional[Path]
    steps: int
    log: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        losses = [row["loss"] for row in self.log if not math.isnan(row["loss"])]
        return losses[-1] if losses else float("nan")


def log_columns(model: Seq2SeqModel) -> List[str]:
    return ["step", "lr", "loss"] + [f"acc_{name}" for name in model.schema.names]


def write_metric_log(path: PathLike, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=list(columns), lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    except OSError as e:
        raise CorpusIOError(path, str(e))


def validation_accuracy(
    model: Seq2SeqModel, valid: Sequence[Sequence[Example]], limit: int
) -> Dict[str, float]:
    """Teacher-forced token accuracy per schema domain (NaN without examples)"""
    scores = {}
    for name, examples in zip(model.schema.names, valid):
        examples = list(examples)[:limit]
        scores[name] = token_accuracy(model, examples) if examples else float("nan")
    return scores


def group_loss(model: Seq2SeqModel, batches: Sequence[Batch], tc: TrainConfig, balance_coefficient: float,
               step: int) -> float:
    """Forward/backward over one accumulation group; gradients land on the parameters"""
    tokens = sum(b.num_target_tokens for b in batches)
    total = 0.0
    for batch in batches:
        logits, _, aux = model.forward(batch, ForwardMode.TRAIN, trace=False, return_aux=True)
        rows = batch.size * batch.target.shape[1]
        loss = ops.cross_entropy(
            ops.reshape(logits, (rows, model.vocab_size)),
            batch.target.reshape(-1),
            pad_id=PAD,
            label_smoothing=tc.label_smoothing,
            normalizer=tokens,
        )
        if aux is not None and balance_coefficient > 0:
            loss = ops.add(loss, ops.scale(aux, balance_coefficient / len(batches)))
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(
                f"non-finite training loss {value} at step {step} (batch {batch.digest()})",
                details={"step": step, "batch_digest": batch.digest()},
            )
        loss.backward()
        total += value
    return total


def train_loop(
    model: Seq2SeqModel,
    stream: TrainingStream,
    tc: TrainConfig,
    valid: Optional[Sequence[Sequence[Example]]] = None,
    out_dir: Optional[PathLike] = None,
    resume: Optional[Checkpoint] = None,
    metrics: Optional[TrainingMetrics] = None,
) -> TrainResult:
    """
    Run tc.max_steps optimizer updates.

    valid holds validation examples per schema domain. The checkpoint goes
    to out_dir / tc.checkpoint_path and the metric log next to it. With
    resume the run continues from the checkpoint's step.
    """
    schema = model.schema
    if len(stream.corpora) != len(schema):
        raise ConfigError(f"stream has {len(stream.corpora)} corpora but the schema has {len(schema)} domains")
    out = Path(out_dir) if out_dir is not None else Path(".")
    checkpoint_path = out / tc.checkpoint_path
    metrics_path = out / METRICS_LOG
    valid = list(valid) if valid is not None else [[] for _ in schema.names]
    columns = log_columns(model)

    batcher = TokenBatcher(stream, tc.batch_tokens, tag_tokens=1 if model.uses_tags else 0)
    state = AdamState()
    rows: List[Dict[str, Any]] = []
    start = 0
    if resume is not None:
        resume.verify_schema(schema.schema_hash())
        load_parameters(model, resume.params)
        dtypes = {name: p.data.dtype for name, p in model.named_parameters()}
        state = AdamState(
            m={k: np.array(v, dtype=dtypes[k]) for k, v in resume.adam_m.items()},
            v={k: np.array(v, dtype=dtypes[k]) for k, v in resume.adam_v.items()},
            t=int(resume.header.get("adam_t", 0)),
        )
        model.dropout_rng.bit_generator.state = resume.header["dropout_rng"]
        batcher.restore(resume.header["batcher"])
        rows = [dict(r) for r in resume.header.get("log", [])]
        start = resume.step
        logger.info(f"Resuming from {checkpoint_path.name} at step {start}")

    def checkpoint(step: int) -> None:
        save_checkpoint(checkpoint_path, model, step, state.m, state.v, extra={
            "adam_t": state.t,
            "batcher": batcher.state(),
            "log": rows,
            "train_config": tc.model_dump(mode="json"),
        })
        write_metric_log(metrics_path, columns, rows)
        if metrics is not None:
            metrics.write(str(out / "metrics.prom"))

    def evaluate(step: int, lr: float, loss: float) -> None:
        model.eval()
        accuracy = validation_accuracy(model, valid, tc.eval_examples)
        model.train()
        row: Dict[str, Any] = {"step": step, "lr": lr, "loss": loss}
        row.update({f"acc_{name}": value for name, value in accuracy.items()})
        rows.append(row)
        if metrics is not None:
            metrics.record_accuracy({k: v for k, v in accuracy.items() if not math.isnan(v)})
        logger.info(
            f"step {step}: lr {lr:.3e}, loss {loss:.4f}, accuracy "
            + ", ".join(f"{k}={v:.3f}" for k, v in accuracy.items() if not math.isnan(v))
        )

    if tc.max_steps == 0 or start >= tc.max_steps:
        if not rows:
            evaluate(start, 0.0, float("nan"))
        checkpoint(start)
        return TrainResult(checkpoint_path, metrics_path, start, rows)

    params = dict(model.named_parameters())
    model.train()
    betas = (tc.adam_beta1, tc.adam_beta2)
    run_started = time.perf_counter()
    tokens_seen = 0
    for step in range(start + 1, tc.max_steps + 1):
        update_context(step=step)
        step_started = time.perf_counter()
        batches = [make_batch(batcher.next_examples(), model.prepare_source) for _ in range(tc.accumulation_steps)]
        tokens = sum(b.num_target_tokens for b in batches)

        model.zero_grad()
        loss = group_loss(model, batches, tc, model.cfg.balance_coefficient, step)
        grads = {name: p.grad for name, p in params.items() if p.grad is not None}
        lr = lr_schedule(step, tc.lr_max, tc.warmup_steps)
        adam_step(params, grads, state, lr, betas, tc.adam_epsilon)

        seconds = time.perf_counter() - step_started
        tokens_seen += tokens
        if metrics is not None:
            metrics.record_step(step, lr, loss, tokens, seconds)
        logger.debug(f"step {step}: loss {loss:.6f}, lr {lr:.3e}, {tokens} target tokens")

        if (tc.eval_every and step % tc.eval_every == 0) or step == tc.max_steps:
            evaluate(step, lr, loss)
            checkpoint(step)

    perf_logger.log_throughput("training", tokens_seen, (time.perf_counter() - run_started) * 1000,
                               unit="target tokens")
    return TrainResult(checkpoint_path, metrics_path, tc.max_steps, rows)
