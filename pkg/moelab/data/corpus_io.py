"""
Corpus Files
============

On-disk dataset layout produced by the generate command:

    <dir>/manifest.json               schema, hash, seeds, counts, dedup report
    <dir>/<domain>.<split>.tsv        one example per line after a header

Corpus line: true_domain, assigned_domain, space-joined source ids,
space-joined target ids (tab-separated, UTF-8).  Domains are written by name.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

from ..core.errors import CorpusIOError, DataError, DomainLookupError
from ..core.logging_config import timed
from ..core.validation import DataConfig
from ..model.schema import DomainSchema
from .sampling import dedup_splits
from .tasks import Example, derive_seed, generate_corpus, split_sizes

logger = logging.getLogger(__name__)

HEADER = "true_domain\tassigned_domain\tsource\ttarget"
SPLITS = ("train", "valid", "test")
MANIFEST = "manifest.json"


@dataclass
class Dataset:
    schema: DomainSchema
    splits: Dict[str, Dict[str, List[Example]]]  # domain name -> split -> examples
    manifest: Dict[str, Any] = field(default_factory=dict)

    def split(self, name: str) -> List[List[Example]]:
        """Examples of one split per schema domain, in schema order"""
        return [self.splits.get(d, {}).get(name, []) for d in self.schema.names]


# =============================================================================
# Generation
# =============================================================================

@timed(logger)
def generate_splits(cfg: DataConfig, schema: DomainSchema, workers: int = 1) -> Dataset:
    """Per-domain splits from derived seeds, train deduplicated against valid/test"""
    jobs: List[Tuple[int, str, int, int]] = []
    for domain_id, name in enumerate(schema.names):
        for split, n in split_sizes(cfg, schema, domain_id).items():
            jobs.append((domain_id, split, n, derive_seed(cfg.data_seed, name, split)))

    def run(job):
        domain_id, split, n, seed = job
        return generate_corpus(schema.task(domain_id), n, seed, domain_id)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]

    splits: Dict[str, Dict[str, List[Example]]] = {name: {} for name in schema.names}
    seeds: Dict[str, Dict[str, int]] = {name: {} for name in schema.names}
    for (domain_id, split, _, seed), examples in zip(jobs, results):
        name = schema.names[domain_id]
        splits[name][split] = examples
        seeds[name][split] = seed

    held_out = [e for name in schema.names for s in ("valid", "test") for e in splits[name].get(s, [])]
    dedup_report = {}
    for name in schema.names:
        train = splits[name].get("train", [])
        kept = dedup_splits(train, held_out)
        splits[name]["train"] = kept
        dedup_report[name] = {"before": len(train), "after": len(kept), "removed": len(train) - len(kept)}

    manifest = {
        "data_config": cfg.model_dump(mode="json"),
        "schema": schema.to_dict(),
        "schema_hash": schema.schema_hash(),
        "seeds": seeds,
        "counts": {name: {s: len(v) for s, v in parts.items()} for name, parts in splits.items()},
        "dedup": dedup_report,
    }
    return Dataset(schema, splits, manifest)


# =============================================================================
# Reading and Writing
# =============================================================================

def write_corpus(path: Union[str, Path], examples: Sequence[Example], schema: DomainSchema) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(HEADER + "\n")
            for e in examples:
                handle.write("\t".join((
                    schema.name(e.true_domain),
                    schema.name(e.assigned_domain),
                    " ".join(str(t) for t in e.source),
                    " ".join(str(t) for t in e.target),
                )) + "\n")
    except OSError as e:
        raise CorpusIOError(path, str(e))


def read_corpus(path: Union[str, Path], schema: DomainSchema) -> List[Example]:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        raise CorpusIOError(path, str(e))
    if not lines or lines[0] != HEADER:
        raise DataError(f"{path}: missing corpus header", coordinates={"path": str(path), "line": 1})
    examples = []
    for number, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"{path}:{number}: expected 4 fields, got {len(fields)}",
                            coordinates={"path": str(path), "line": number})
        try:
            examples.append(Example(
                source=tuple(int(t) for t in fields[2].split()),
                target=tuple(int(t) for t in fields[3].split()),
                true_domain=schema.index(fields[0]),
                assigned_domain=schema.index(fields[1]),
            ))
        except (ValueError, DomainLookupError) as e:
            raise DataError(f"{path}:{number}: {e}", coordinates={"path": str(path), "line": number})
    return examples


def write_dataset(dataset: Dataset, out_dir: Union[str, Path]) -> List[Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CorpusIOError(out, str(e))
    written = []
    for name, parts in dataset.splits.items():
        for split in SPLITS:
            if split not in parts:
                continue
            path = out / f"{name}.{split}.tsv"
            write_corpus(path, parts[split], dataset.schema)
            written.append(path)
    manifest_path = out / MANIFEST
    try:
        manifest_path.write_text(json.dumps(dataset.manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise CorpusIOError(manifest_path, str(e))
    written.append(manifest_path)
    logger.info(f"Wrote {len(written)} files to {out}")
    return written


def load_dataset(data_dir: Union[str, Path]) -> Dataset:
    base = Path(data_dir)
    manifest_path = base / MANIFEST
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except OSError as e:
        raise CorpusIOError(manifest_path, str(e))
    except json.JSONDecodeError as e:
        raise DataError(f"{manifest_path}: invalid JSON ({e})")
    schema = DomainSchema.from_dict(manifest["schema"])
    splits: Dict[str, Dict[str, List[Example]]] = {}
    for name in schema.names:
        splits[name] = {}
        for split in SPLITS:
            path = base / f"{name}.{split}.tsv"
            if path.exists():
                splits[name][split] = read_corpus(path, schema)
    return Dataset(schema, splits, manifest)
