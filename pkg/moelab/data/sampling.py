"""
Sampling, Randomization and Batching
====================================

- TrainingStream: per-domain probabilities, uniform with replacement within a domain
- domain_randomize: relabel non-generic examples as generic with probability p
- dedup_splits: drop training pairs that also occur in a test split
- TokenBatcher: source-token budget batches with resumable state
"""

import logging
from dataclasses import asdict
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence

import numpy as np

from ..core.errors import ConfigError, ContractError
from ..model.schema import DomainSchema
from ..model.transformer import Batch, pad_sequences
from .tasks import Example, derive_seed, relabel

logger = logging.getLogger(__name__)

GENERIC_ID = 0


def domain_randomize(example: Example, p: float, rng: np.random.Generator, generic_id: int = GENERIC_ID) -> Example:
    """Assign the generic label with probability p; generic examples pass through"""
    if not 0.0 <= p <= 1.0:
        raise ContractError(f"randomization probability must lie in [0, 1], got {p}")
    if example.true_domain == generic_id:
        return example
    if rng.random() < p:
        return relabel(example, generic_id)
    if example.assigned_domain != example.true_domain:
        return relabel(example, example.true_domain)
    return example


def dedup_splits(train: Sequence[Example], test: Sequence[Example]) -> List[Example]:
    """Training examples whose (source, target) pair is absent from test, order kept"""
    seen = {(e.source, e.target) for e in test}
    return [e for e in train if (e.source, e.target) not in seen]


class TrainingStream:
    """Endless example stream; domain drawn per probability, example uniformly within it"""

    def __init__(
        self,
        corpora: Sequence[Sequence[Example]],
        probabilities: Sequence[float],
        seed: int,
        dr_probability: float = 0.0,
    ):
        probs = np.asarray(probabilities, dtype=float)
        problems = []
        if len(probs) != len(corpora):
            problems.append(f"{len(probs)} probabilities for {len(corpora)} corpora")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            problems.append(f"probabilities must be non-negative and sum to 1 (sum {probs.sum():.12g})")
        for i, (p, corpus) in enumerate(zip(probs, corpora)):
            if p > 0 and not corpus:
                problems.append(f"domain {i} has probability {p} but an empty corpus")
        if not 0.0 <= dr_probability <= 1.0:
            problems.append(f"dr_probability {dr_probability} outside [0, 1]")
        if problems:
            raise ConfigError("training stream misconfigured", violations=problems)

        self.corpora = [list(c) for c in corpora]
        self.probabilities = probs
        self.dr_probability = dr_probability
        self._cdf = np.cumsum(probs)
        self._last = int(np.flatnonzero(probs > 0)[-1])
        self._rng = np.random.default_rng(seed)
        self._dr_rng = np.random.default_rng(derive_seed(seed, "domain-randomization"))
        self.drawn = 0

    def __iter__(self) -> Iterator[Example]:
        return self

    def __next__(self) -> Example:
        domain = min(int(np.searchsorted(self._cdf, self._rng.random(), side="right")), self._last)
        corpus = self.corpora[domain]
        example = corpus[int(self._rng.integers(len(corpus)))]
        if self.dr_probability > 0:
            example = domain_randomize(example, self.dr_probability, self._dr_rng)
        self.drawn += 1
        return example

    def state(self) -> Dict[str, Any]:
        return {
            "rng": self._rng.bit_generator.state,
            "dr_rng": self._dr_rng.bit_generator.state,
            "drawn": self.drawn,
        }

    def restore(self, state: Dict[str, Any]) -> None:
        self._rng.bit_generator.state = state["rng"]
        self._dr_rng.bit_generator.state = state["dr_rng"]
        self.drawn = int(state["drawn"])


def sample_training_stream(
    corpora: Sequence[Sequence[Example]], probabilities: Sequence[float], seed: int, dr_probability: float = 0.0
) -> TrainingStream:
    return TrainingStream(corpora, probabilities, seed, dr_probability)


# =============================================================================
# Batching
# =============================================================================

def make_batch(
    examples: Sequence[Example],
    prepare_source: Callable[[Sequence[int], int], List[int]],
    example_ids: Optional[Sequence[int]] = None,
) -> Batch:
    """Pad examples into a Batch; prepare_source applies the model's tag convention"""
    sources = [prepare_source(e.source, e.assigned_domain) for e in examples]
    return Batch(
        source=pad_sequences(sources),
        target=pad_sequences([e.target for e in examples]),
        domains=np.array([e.assigned_domain for e in examples], dtype=np.int64),
        examples=None if example_ids is None else np.asarray(example_ids, dtype=np.int64),
    )


def tag_preparer(schema: DomainSchema, tags: bool) -> Callable[[Sequence[int], int], List[int]]:
    if tags:
        return schema.prepend_domain_tag
    return lambda source, domain: list(source)


class TokenBatcher:
    """Groups stream examples until the source-token budget would be exceeded"""

    def __init__(self, stream: TrainingStream, batch_tokens: int, tag_tokens: int = 0):
        if batch_tokens < 1:
            raise ConfigError(f"batch_tokens must be positive, got {batch_tokens}")
        self.stream = stream
        self.batch_tokens = batch_tokens
        self.tag_tokens = tag_tokens
        self._pending: Optional[Example] = None

    def next_examples(self) -> List[Example]:
        examples: List[Example] = []
        used = 0
        while True:
            example = self._pending if self._pending is not None else next(self.stream)
            self._pending = None
            cost = len(example.source) + self.tag_tokens
            if examples and used + cost > self.batch_tokens:
                self._pending = example
                return examples
            examples.append(example)
            used += cost
            if used >= self.batch_tokens:
                return examples

    def state(self) -> Dict[str, Any]:
        pending = None
        if self._pending is not None:
            pending = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self._pending).items()}
        return {"stream": self.stream.state(), "pending": pending}

    def restore(self, state: Dict[str, Any]) -> None:
        self.stream.restore(state["stream"])
        pending = state.get("pending")
        self._pending = None if pending is None else Example(
            source=tuple(pending["source"]),
            target=tuple(pending["target"]),
            true_domain=int(pending["true_domain"]),
            assigned_domain=int(pending["assigned_domain"]),
        )
