"""
Robustness and Gate Analysis
============================

- RobustnessMatrix / wrong_label_matrix: every test set scored under every label
- ActivityProfile / top1_activity: per-layer share of tokens whose first
  choice is each expert, pooled over encoder and decoder
- expert_similarity, similarity_matrix: cosine similarity of profiles
- label_sweep_similarity: one dataset decoded under each label
- dataset_similarity: every dataset decoded under one label
- CSV / JSON / long-form CSV writers for plotting outside the package
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..core.errors import ContractError, CorpusIOError
from ..data.tasks import Example
from ..model.schema import GENERIC
from ..model.transformer import Seq2SeqModel
from ..moe.trace import GateTrace, layer_sort_key
from .decoding import decode_corpus
from .metrics import corpus_bleu, strip_eos, token_accuracy

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class Metric(str, Enum):
    TOKEN_ACCURACY = "token_accuracy"
    BLEU = "bleu"


# =============================================================================
# Writers
# =============================================================================

def _write_text(path: PathLike, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as e:
        raise CorpusIOError(path, str(e))


def _write_grid(path: PathLike, rows: Sequence[str], cols: Sequence[str], values: np.ndarray, corner: str) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow([corner, *cols])
            for name, row in zip(rows, values):
                writer.writerow([name, *(repr(float(v)) for v in row)])
    except OSError as e:
        raise CorpusIOError(path, str(e))


def _write_long(path: PathLike, rows: Sequence[str], cols: Sequence[str], values: np.ndarray) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["row", "col", "value"])
            for i, r in enumerate(rows):
                for j, c in enumerate(cols):
                    writer.writerow([r, c, repr(float(values[i, j]))])
    except OSError as e:
        raise CorpusIOError(path, str(e))


# =============================================================================
# Wrong-Label Robustness
# =============================================================================

@dataclass
class RobustnessMatrix:
    """Rows: true test domain. Columns: label used at decoding."""

    domains: List[str]
    values: np.ndarray
    metric: str = Metric.TOKEN_ACCURACY.value
    model_id: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.domains)
        if self.values.shape != (n, n):
            raise ContractError(f"robustness matrix must be {n}x{n}, got {self.values.shape}")

    @property
    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).copy()

    def off_diagonal_means(self) -> np.ndarray:
        n = len(self.domains)
        if n < 2:
            return np.full(n, np.nan)
        off = ~np.eye(n, dtype=bool)
        return np.array([self.values[i, off[i]].mean() for i in range(n)])

    @property
    def degradation(self) -> float:
        """Mean over rows of (correct-label score - mean wrong-label score)"""
        if len(self.domains) < 2:
            return 0.0
        return float(np.mean(self.diagonal - self.off_diagonal_means()))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "metric": self.metric,
            "model_id": self.model_id,
            "seed": self.seed,
            "domains": list(self.domains),
            "values": self.values.tolist(),
            "degradation": self.degradation,
        }

    def write_csv(self, path: PathLike) -> None:
        _write_grid(path, self.domains, self.domains, self.values, "true_domain\\label")

    def write_long_csv(self, path: PathLike) -> None:
        _write_long(path, self.domains, self.domains, self.values)

    def write_json(self, path: PathLike) -> None:
        _write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")


Scorer = Callable[[Sequence[Example], int], float]


def default_scorer(model: Seq2SeqModel, metric: Metric, max_len: Optional[int] = None, workers: int = 1) -> Scorer:
    metric = Metric(metric)
    if metric == Metric.TOKEN_ACCURACY:
        return lambda examples, label: token_accuracy(model, examples, label)

    def bleu(examples: Sequence[Example], label: int) -> float:
        hyps, _ = decode_corpus(model, [e.source for e in examples], [label] * len(examples), max_len,
                                workers=workers)
        return corpus_bleu(hyps, [strip_eos(e.target) for e in examples])

    return bleu


def wrong_label_matrix(
    model: Seq2SeqModel,
    testsets: Mapping[int, Sequence[Example]],
    labels: Sequence[int],
    metric: Metric = Metric.TOKEN_ACCURACY,
    scorer: Optional[Scorer] = None,
    max_len: Optional[int] = None,
    workers: int = 1,
    model_id: str = "",
    seed: Optional[int] = None,
) -> RobustnessMatrix:
    """Score the test set of every labelled domain under every label"""
    if not model.uses_domain_label:
        raise ContractError("wrong-label decoding needs a model whose output depends on the domain label")
    labels = [int(l) for l in labels]
    missing = [l for l in labels if not testsets.get(l)]
    if missing:
        raise ContractError(f"no test examples for labelled domains {missing}")
    score = scorer or default_scorer(model, metric, max_len, workers)
    values = np.array([[score(testsets[row], col) for col in labels] for row in labels])
    matrix = RobustnessMatrix([model.schema.name(l) for l in labels], values, Metric(metric).value, model_id, seed)
    logger.info(f"Wrong-label matrix over {len(labels)} domains: degradation {matrix.degradation:.4f}")
    return matrix


# =============================================================================
# Expert Activity
# =============================================================================

@dataclass
class ActivityProfile:
    """Concatenated per-layer blocks of top-1 activity fractions"""

    layers: List[str]
    expert_count: int
    values: np.ndarray
    tokens: Dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.layers) * self.expert_count,):
            raise ContractError(
                f"profile of {len(self.layers)} layers x {self.expert_count} experts has shape {self.values.shape}"
            )

    def __len__(self) -> int:
        return len(self.values)

    def block(self, layer: str) -> np.ndarray:
        i = self.layers.index(layer)
        return self.values[i * self.expert_count:(i + 1) * self.expert_count]

    def for_stack(self, stack: str) -> "ActivityProfile":
        chosen = [l for l in self.layers if l.partition(".")[0] == stack]
        if not chosen:
            raise ContractError(f"profile has no {stack} layers")
        return ActivityProfile(
            chosen, self.expert_count,
            np.concatenate([self.block(l) for l in chosen]),
            {l: self.tokens[l] for l in chosen if l in self.tokens},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "layers": list(self.layers),
            "expert_count": self.expert_count,
            "values": self.values.tolist(),
            "tokens": dict(self.tokens),
        }


def top1_activity(trace: GateTrace) -> ActivityProfile:
    if trace is None or trace.is_empty():
        raise ContractError("top-1 activity needs a non-empty gate trace")
    layers = trace.merged_layers()
    expert_count = layers[0].expert_count
    blocks, tokens = [], {}
    for lt in layers:
        if lt.expert_count != expert_count:
            raise ContractError(f"layer {lt.layer} has {lt.expert_count} experts, expected {expert_count}")
        counts = np.bincount(lt.indices[:, 0], minlength=expert_count)
        blocks.append(counts / len(lt))
        tokens[lt.layer] = len(lt)
    return ActivityProfile([lt.layer for lt in layers], expert_count, np.concatenate(blocks), tokens)


def expert_similarity(a: Union[ActivityProfile, np.ndarray], b: Union[ActivityProfile, np.ndarray]) -> float:
    """Cosine similarity clipped to [0, 1]; exactly 1 for identical profiles"""
    u = a.values if isinstance(a, ActivityProfile) else np.asarray(a, dtype=float)
    v = b.values if isinstance(b, ActivityProfile) else np.asarray(b, dtype=float)
    if u.shape != v.shape:
        raise ContractError(f"profiles differ in length: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ContractError("expert similarity is undefined for a zero profile")
    if np.array_equal(u, v):
        return 1.0
    return float(np.clip(np.dot(u, v) / (nu * nv), 0.0, 1.0))


@dataclass
class SimilarityMatrix:
    names: List[str]
    values: np.ndarray
    profiles: Dict[str, ActivityProfile] = field(default_factory=dict)

    def mean_off_diagonal(self) -> float:
        n = len(self.names)
        if n < 2:
            return float("nan")
        return float(self.values[~np.eye(n, dtype=bool)].mean())

    def to_dict(self) -> Dict[str, Any]:
        return {
            "names": list(self.names),
            "values": self.values.tolist(),
            "mean_off_diagonal": self.mean_off_diagonal(),
            "profiles": {k: p.to_dict() for k, p in self.profiles.items()},
        }

    def write_csv(self, path: PathLike) -> None:
        _write_grid(path, self.names, self.names, self.values, "name")

    def write_long_csv(self, path: PathLike) -> None:
        _write_long(path, self.names, self.names, self.values)

    def write_json(self, path: PathLike) -> None:
        _write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")


def similarity_matrix(profiles: Mapping[str, ActivityProfile]) -> SimilarityMatrix:
    names = list(profiles)
    n = len(names)
    values = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            values[i, j] = values[j, i] = expert_similarity(profiles[names[i]], profiles[names[j]])
    return SimilarityMatrix(names, values, dict(profiles))


def collect_activity(
    model: Seq2SeqModel,
    examples: Sequence[Example],
    label: int,
    max_len: Optional[int] = None,
    workers: int = 1,
) -> ActivityProfile:
    """Greedy-decode examples under one label and profile the recorded routing"""
    _, trace = decode_corpus(model, [e.source for e in examples], [label] * len(examples), max_len,
                             trace=True, workers=workers)
    return top1_activity(trace)


def _require_smoe(model: Seq2SeqModel) -> None:
    if not model.smoe_layers:
        raise ContractError("gate analysis needs a model with SMoE layers")


def label_sweep_similarity(
    model: Seq2SeqModel,
    examples: Sequence[Example],
    labels: Sequence[int],
    max_len: Optional[int] = None,
    workers: int = 1,
) -> SimilarityMatrix:
    """Pairwise similarity of expert activity when one dataset is decoded under each label"""
    _require_smoe(model)
    if not examples:
        raise ContractError("label sweep needs a non-empty dataset")
    profiles = {model.schema.name(l): collect_activity(model, examples, int(l), max_len, workers) for l in labels}
    return similarity_matrix(profiles)


def dataset_similarity(
    model: Seq2SeqModel,
    datasets: Mapping[str, Sequence[Example]],
    label: Union[int, str] = GENERIC,
    max_len: Optional[int] = None,
    workers: int = 1,
) -> SimilarityMatrix:
    """Pairwise similarity of expert activity across datasets decoded under one label"""
    _require_smoe(model)
    label_id = model.schema.index(label)
    profiles = {}
    for name, examples in datasets.items():
        if not examples:
            raise ContractError(f"dataset {name} is empty")
        profiles[name] = collect_activity(model, examples, label_id, max_len, workers)
    return similarity_matrix(profiles)


def write_profiles_csv(path: PathLike, profiles: Mapping[str, ActivityProfile]) -> None:
    """Long form: dataset, layer, expert, activity"""
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["dataset", "layer", "expert", "activity"])
            for name, profile in profiles.items():
                for layer in sorted(profile.layers, key=layer_sort_key):
                    for e, value in enumerate(profile.block(layer)):
                        writer.writerow([name, layer, e, repr(float(value))])
    except OSError as e:
        raise CorpusIOError(path, str(e))
