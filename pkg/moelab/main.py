"""
MoE Lab - Command Line
======================

Commands:
- generate: synthetic per-domain corpora and a manifest
- train: train one experiment, resumable from its checkpoint
- eval: per-domain scores, wrong-label robustness, gate statistics
- cost: parameter and FLOPs accounting for one or more configs
- bench: inference timing over batch sizes

Exit codes: 0 success, 1 configuration, 2 data, 3 numeric.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from dotenv import load_dotenv

from .bench.harness import NullModel, compare_configs, sweep, write_jsonl
from .config import Settings, get_settings
from .core.errors import CompatibilityError, ContractError, CorpusIOError, handle_cli_errors
from .core.logging_config import LogConfig, LogContext, setup_logging
from .core.monitoring import TrainingMetrics
from .core.validation import Conditioning
from .cost.accounting import cost_report, format_table, write_reports_json, write_table_csv
from .data.corpus_io import generate_splits, load_dataset, write_dataset
from .data.sampling import sample_training_stream
from .data.tasks import build_synthetic_schema
from .evaluation.analysis import (
    Metric,
    collect_activity,
    dataset_similarity,
    label_sweep_similarity,
    similarity_matrix,
    wrong_label_matrix,
    write_profiles_csv,
)
from .evaluation.metrics import score_testset
from .experiment import ExperimentConfig
from .model.checkpoint import load_checkpoint, restore_model
from .model.schema import GENERIC
from .model.transformer import build_model
from .numerics import set_debug_checks, set_default_dtype
from .train.loop import train_loop

logger = logging.getLogger(__name__)


def _write_json(path: Path, payload: Any) -> None:
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise CorpusIOError(path, str(e))


def _run_id(checkpoint: str) -> str:
    """Run directory name; train always writes checkpoint.npz into it"""
    path = Path(checkpoint).resolve()
    return path.parent.name or path.stem


def _load_experiment(path: str, settings: Settings, seed: Optional[int]) -> ExperimentConfig:
    config = ExperimentConfig.load(path, default_seed=settings.seed)
    if seed is not None:
        config = config.with_overrides(seed=seed)
    return config


# =============================================================================
# Commands
# =============================================================================

@handle_cli_errors
def cmd_generate(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_experiment(args.config, settings, args.seed)
    schema = build_synthetic_schema(config.data)
    dataset = generate_splits(config.data, schema, workers=settings.workers)
    write_dataset(dataset, args.out)
    removed = sum(r["removed"] for r in dataset.manifest["dedup"].values())
    logger.info(f"Generated {len(schema)} domains into {args.out} ({removed} training duplicates removed)")
    return 0


@handle_cli_errors
def cmd_train(args: argparse.Namespace, settings: Settings) -> int:
    config = _load_experiment(args.config, settings, args.seed)
    schema = build_synthetic_schema(config.data)
    dataset = load_dataset(args.data)
    if dataset.schema.schema_hash() != schema.schema_hash():
        raise CompatibilityError(expected=schema.schema_hash(), found=dataset.schema.schema_hash())

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusIOError(out, str(e))
    config.save(out / "experiment.cfg")

    model = build_model(config.model, schema)
    resume = load_checkpoint(out / config.train.checkpoint_path) if args.resume else None
    stream = sample_training_stream(dataset.split("train"), schema.probabilities, config.train.seed,
                                   config.model.dr_probability)
    metrics = TrainingMetrics() if settings.metrics_enabled else None
    result = train_loop(model, stream, config.train, valid=dataset.split("valid"), out_dir=out,
                        resume=resume, metrics=metrics)
    logger.info(f"Finished {result.steps} steps, final loss {result.final_loss:.4f}: {result.checkpoint_path}")
    return 0


@handle_cli_errors
def cmd_eval(args: argparse.Namespace, settings: Settings) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    checkpoint.verify_schema(dataset.schema.schema_hash())
    model = restore_model(checkpoint)
    model.eval()
    schema = model.schema
    workers = settings.workers
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusIOError(out, str(e))

    testsets = {i: examples for i, examples in enumerate(dataset.split(args.split)) if examples}
    labels = {i: (i if schema.domains[i].seen else schema.index(GENERIC)) for i in testsets}

    scores = [score_testset(model, testsets[i], i, labels[i], workers=workers).to_dict() for i in testsets]
    _write_json(out / "scores.json", scores)

    if args.wrong_labels:
        labelled = [i for i in schema.seen_ids if i in testsets]
        matrix = wrong_label_matrix(model, testsets, labelled, Metric(args.metric), workers=workers,
                                    model_id=_run_id(args.checkpoint), seed=model.cfg.seed)
        matrix.write_csv(out / "wrong_labels.csv")
        matrix.write_long_csv(out / "wrong_labels_long.csv")
        matrix.write_json(out / "wrong_labels.json")

    if args.gate_stats:
        if not model.smoe_layers:
            raise ContractError("--gate-stats needs a model with SMoE layers")
        profiles = {schema.name(i): collect_activity(model, testsets[i], labels[i], workers=workers)
                    for i in testsets}
        write_profiles_csv(out / "activity.csv", profiles)
        similarity = similarity_matrix(profiles)
        similarity.write_csv(out / "gate_similarity.csv")
        similarity.write_long_csv(out / "gate_similarity_long.csv")
        similarity.write_json(out / "gate_similarity.json")

    if args.dataset_similarity:
        named = {schema.name(i): testsets[i] for i in testsets}
        similarity = dataset_similarity(model, named, GENERIC, workers=workers)
        similarity.write_csv(out / "dataset_similarity.csv")
        similarity.write_long_csv(out / "dataset_similarity_long.csv")
        similarity.write_json(out / "dataset_similarity.json")

    if args.label_sweep:
        domain = schema.index(args.sweep_domain or schema.names[schema.seen_ids[0]])
        if domain not in testsets:
            raise ContractError(f"no {args.split} examples for {schema.name(domain)}")
        sweep_labels = [schema.index(GENERIC)] + list(schema.seen_ids)
        similarity = label_sweep_similarity(model, testsets[domain], sweep_labels, workers=workers)
        similarity.write_csv(out / "label_sweep.csv")
        similarity.write_long_csv(out / "label_sweep_long.csv")
        similarity.write_json(out / "label_sweep.json")

    for row in scores:
        print(f"{row['domain']:<20}{row['label']:<12}{row['token_accuracy']:>8.4f}{row['bleu']:>8.2f}")
    return 0


@handle_cli_errors
def cmd_cost(args: argparse.Namespace, settings: Settings) -> int:
    reports = []
    for path in args.config:
        config = _load_experiment(path, settings, None)
        schema = build_synthetic_schema(config.data)
        reports.append(cost_report(config.model, schema, args.src_len, args.tgt_len,
                                   instrument=not args.no_instrument, name=config.name))
        if config.model.conditioning == Conditioning.TAGS:
            reports.append(cost_report(config.model, schema, args.src_len, args.tgt_len, tagged=False,
                                       instrument=not args.no_instrument, name=f"{config.name} (untagged)"))
    for line in format_table(reports):
        print(line)
    if args.out:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise CorpusIOError(out, str(e))
        write_reports_json(out / "cost.json", reports)
        write_table_csv(out / "cost.csv", reports)
    return 0


@handle_cli_errors
def cmd_bench(args: argparse.Namespace, settings: Settings) -> int:
    dataset = load_dataset(args.data)
    testset = [e for examples in dataset.split(args.split) for e in examples]
    if args.limit:
        testset = testset[: args.limit]

    models: Dict[str, Any] = {}
    for path in args.checkpoint:
        checkpoint = load_checkpoint(path)
        checkpoint.verify_schema(dataset.schema.schema_hash())
        models[_run_id(path)] = restore_model(checkpoint).eval()
    if args.null:
        models["null"] = NullModel(dataset.schema.vocab_size)
    if not models:
        raise ContractError("bench needs at least one --checkpoint or --null")

    results = sweep(models, testset, args.batch_tokens, args.repeats, args.warmup, workers=args.workers)
    if args.out:
        write_jsonl(args.out, results)
    for size in args.batch_tokens:
        rows = compare_configs([r for r in results if r.batch_tokens == size], args.baseline)
        for row in rows:
            print(f"{row['config_id']:<24}{size:>8}{row['median']:>12.4f}s{row['ratio']:>8.2f}x")
    return 0


# =============================================================================
# Parser
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moelab", description="Sparse mixture-of-experts multi-domain lab")
    parser.add_argument("--log-level", default=None, help="Override MOELAB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Write synthetic corpora and a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("train", help="Train one experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Score a checkpoint on a generated dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--metric", default=Metric.TOKEN_ACCURACY.value, choices=[m.value for m in Metric])
    p.add_argument("--wrong-labels", action="store_true", help="Every seen test set under every seen label")
    p.add_argument("--gate-stats", action="store_true", help="Top-1 expert activity per test set")
    p.add_argument("--dataset-similarity", action="store_true", help="Expert similarity across test sets, generic label")
    p.add_argument("--label-sweep", action="store_true", help="Expert similarity across labels for one test set")
    p.add_argument("--sweep-domain", default=None, help="Test set for --label-sweep (first seen domain)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("cost", help="Parameter and FLOPs accounting")
    p.add_argument("--config", required=True, action="append", help="Repeat for several configs")
    p.add_argument("--src-len", type=int, default=10)
    p.add_argument("--tgt-len", type=int, default=10)
    p.add_argument("--no-instrument", action="store_true", help="Skip the runtime MAC count")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_cost)

    p = sub.add_parser("bench", help="Inference timing over batch sizes")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.add_argument("--batch-tokens", type=int, nargs="+", default=[1, 64, 512])
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--limit", type=int, default=0, help="Use only the first N test examples")
    p.add_argument("--null", action="store_true", help="Add a no-op decoder as a lower bound")
    p.add_argument("--baseline", default=None)
    p.add_argument("--out", default=None, help="JSON lines output")
    p.set_defaults(handler=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    settings = get_settings()
    setup_logging(LogConfig(
        level=args.log_level or settings.log_level,
        json_format=settings.log_format == "json",
        log_file=settings.log_file,
    ))
    set_default_dtype(settings.precision)
    set_debug_checks(settings.debug_checks)
    with LogContext(command=args.command, seed=getattr(args, "seed", None) or settings.seed):
        return args.handler(args, settings)


if __name__ == "__main__":
    sys.exit(main())
