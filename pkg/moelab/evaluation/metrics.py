"""
Scoring
=======

- corpus_bleu: corpus-level BLEU-4 with brevity penalty and a 1e-9 floor
- token_accuracy: teacher-forced exact match per non-pad target token,
  optionally restricted to positions whose source token lies in a range
- sequence_accuracy: exact match of whole decoded outputs
- score_testset: the per-domain score row used by the eval command
"""

import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Any, Dict, Hashable, List, Optional, Sequence, Set

import numpy as np

from ..core.errors import ContractError
from ..data.sampling import make_batch
from ..data.tasks import Example
from ..model.schema import EOS, GENERIC, DomainSchema
from ..model.transformer import ForwardMode, Seq2SeqModel
from ..numerics import no_grad
from .decoding import decode_corpus

logger = logging.getLogger(__name__)

MAX_ORDER = 4
PRECISION_FLOOR = 1e-9


# =============================================================================
# BLEU
# =============================================================================

def _ngrams(tokens: Sequence[Hashable], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    hypotheses: Sequence[Sequence[Hashable]],
    references: Sequence[Sequence[Hashable]],
    max_order: int = MAX_ORDER,
) -> float:
    """
    Corpus BLEU in [0, 100].

    Orders for which the hypotheses contain no n-grams at all are left out
    of the geometric mean; zero precisions are floored at 1e-9.
    """
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not references:
        raise ContractError("corpus_bleu needs at least one reference")

    matches = [0] * max_order
    totals = [0] * max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            totals[n - 1] += sum(hyp_counts.values())

    if hyp_len == 0:
        return 0.0
    log_precisions = [
        math.log(max(m / t, PRECISION_FLOOR)) for m, t in zip(matches, totals) if t > 0
    ]
    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(sum(log_precisions) / len(log_precisions))


# =============================================================================
# Accuracy
# =============================================================================

def _relabelled(examples: Sequence[Example], label: Optional[int]) -> List[Example]:
    if label is None:
        return list(examples)
    return [Example(e.source, e.target, e.true_domain, int(label)) for e in examples]


def teacher_forced_predictions(
    model: Seq2SeqModel,
    examples: Sequence[Example],
    label: Optional[int] = None,
    batch_size: int = 64,
) -> List[np.ndarray]:
    """Argmax prediction for every target position of every example"""
    examples = _relabelled(examples, label)
    predictions: List[np.ndarray] = []
    with no_grad():
        for start in range(0, len(examples), batch_size):
            chunk = examples[start:start + batch_size]
            batch = make_batch(chunk, model.prepare_source)
            logits, _ = model.forward(batch, ForwardMode.INFER, trace=False)
            best = np.argmax(logits.data, axis=-1)
            predictions.extend(best[i, :len(e.target)] for i, e in enumerate(chunk))
    return predictions


def token_accuracy(
    model: Seq2SeqModel,
    examples: Sequence[Example],
    label: Optional[int] = None,
    restrict_to: Optional[Set[int]] = None,
    batch_size: int = 64,
) -> float:
    """
    Fraction of target tokens predicted exactly under teacher forcing.

    label overrides every example's assigned domain. With restrict_to only
    positions whose aligned source token is in the set count. NaN when no
    position qualifies.
    """
    correct = total = 0
    for e, pred in zip(examples, teacher_forced_predictions(model, examples, label, batch_size)):
        target = np.asarray(e.target)
        keep = np.ones(len(target), dtype=bool)
        if restrict_to is not None:
            keep = np.array([t in restrict_to for t in e.source[:len(target)]], dtype=bool)
        correct += int((pred[keep] == target[keep]).sum())
        total += int(keep.sum())
    return correct / total if total else float("nan")


def sequence_accuracy(hypotheses: Sequence[Sequence[int]], references: Sequence[Sequence[int]]) -> float:
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    if not references:
        return float("nan")
    return sum(list(h) == list(r) for h, r in zip(hypotheses, references)) / len(references)


def strip_eos(sequence: Sequence[int]) -> List[int]:
    return [t for t in sequence if t != EOS]


# =============================================================================
# Token Ranges
# =============================================================================

def shared_range(schema: DomainSchema) -> Set[int]:
    """Tokens every domain maps differently (only the label disambiguates them)"""
    task = schema.task(GENERIC)
    return set(task.shared) if task is not None else set()


def uncovered_range(schema: DomainSchema, domain: Any) -> Set[int]:
    """Tokens of a domain that the generic domain never trains on"""
    task, generic = schema.task(domain), schema.task(GENERIC)
    if task is None or generic is None:
        return set()
    return set(task.vocabulary()) - set(generic.vocabulary())


# =============================================================================
# Score Rows
# =============================================================================

@dataclass
class DomainScore:
    domain: str
    label: str
    examples: int
    token_accuracy: float
    sequence_accuracy: float
    bleu: float
    shared_accuracy: float
    uncovered_accuracy: float

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def score_testset(
    model: Seq2SeqModel,
    examples: Sequence[Example],
    domain: int,
    label: int,
    max_len: Optional[int] = None,
    workers: int = 1,
) -> DomainScore:
    """Teacher-forced accuracies plus greedy-decode sequence accuracy and BLEU"""
    schema = model.schema
    if not examples:
        raise ContractError(f"empty test set for domain {schema.name(domain)}")
    hyps, _ = decode_corpus(model, [e.source for e in examples], [label] * len(examples), max_len, workers=workers)
    refs = [strip_eos(e.target) for e in examples]
    uncovered = uncovered_range(schema, domain)
    score = DomainScore(
        domain=schema.name(domain),
        label=schema.name(label),
        examples=len(examples),
        token_accuracy=token_accuracy(model, examples, label),
        sequence_accuracy=sequence_accuracy(hyps, refs),
        bleu=corpus_bleu(hyps, refs),
        shared_accuracy=token_accuracy(model, examples, label, restrict_to=shared_range(schema)),
        uncovered_accuracy=token_accuracy(model, examples, label, restrict_to=uncovered) if uncovered else float("nan"),
    )
    logger.info(
        f"{score.domain} [{score.label}]: token acc {score.token_accuracy:.4f}, "
        f"seq acc {score.sequence_accuracy:.4f}, BLEU {score.bleu:.2f}"
    )
    return score
