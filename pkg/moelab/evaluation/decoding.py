"""
Greedy Decoding
===============

Beam size 1: the argmax token per step (lowest id on ties), stopping at
EOS or max_len.  Outputs exclude EOS.  The domain label passed in drives
every conditioning path (tags, gate variants, adapters).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ContractError
from ..model.schema import BOS, EOS, PAD
from ..model.transformer import Seq2SeqModel
from ..moe.trace import GateTrace

logger = logging.getLogger(__name__)

DEFAULT_EXTRA_STEPS = 4


def default_max_len(sources: Sequence[Sequence[int]]) -> int:
    return max((len(s) for s in sources), default=0) + DEFAULT_EXTRA_STEPS


def greedy_decode_batch(
    model: Seq2SeqModel,
    sources: Sequence[Sequence[int]],
    domains: Sequence[int],
    max_len: Optional[int] = None,
    trace: bool = False,
    examples: Optional[Sequence[int]] = None,
) -> Tuple[List[List[int]], Optional[GateTrace]]:
    """
    Decode raw sources (content + EOS) under the given labels.

    Sources are prepared with the model's tag convention here, so callers
    always pass untagged sequences. With trace=True the returned GateTrace
    holds encoder routing and each generated decoder position once.
    """
    if len(sources) != len(domains):
        raise ContractError(f"{len(sources)} sources but {len(domains)} domain labels")
    if max_len is None:
        max_len = default_max_len(sources)
    if max_len < 1:
        raise ContractError(f"max_len must be at least 1, got {max_len}")
    if not sources:
        return [], (GateTrace() if trace else None)

    prepared = [model.prepare_source(s, int(d)) for s, d in zip(sources, domains)]
    state = model.start_decoding(prepared, domains, examples=examples, trace=trace)

    batch = len(prepared)
    prefix = np.full((batch, 1), BOS, dtype=np.int64)
    done = np.zeros(batch, dtype=bool)
    outputs: List[List[int]] = [[] for _ in range(batch)]
    for _ in range(max_len):
        logits = model.next_token_logits(state, prefix)
        chosen = np.argmax(logits, axis=-1)
        for row in np.flatnonzero(~done):
            token = int(chosen[row])
            if token == EOS:
                done[row] = True
            else:
                outputs[row].append(token)
        if done.all():
            break
        # finished rows feed PAD so their later positions are neither attended nor traced
        step = np.where(done, PAD, chosen)
        prefix = np.concatenate([prefix, step[:, None]], axis=1)
    return outputs, state.trace


def greedy_decode(model: Seq2SeqModel, source: Sequence[int], d: int, max_len: Optional[int] = None) -> List[int]:
    outputs, _ = greedy_decode_batch(model, [source], [d], max_len)
    return outputs[0]


def decode_corpus(
    model: Seq2SeqModel,
    sources: Sequence[Sequence[int]],
    domains: Sequence[int],
    max_len: Optional[int] = None,
    batch_size: int = 32,
    trace: bool = False,
    workers: int = 1,
) -> Tuple[List[List[int]], Optional[GateTrace]]:
    """Chunked decoding; chunks may run in worker threads and merge in input order"""
    if len(sources) != len(domains):
        raise ContractError(f"{len(sources)} sources but {len(domains)} domain labels")
    if max_len is None:
        max_len = default_max_len(sources)
    starts = list(range(0, len(sources), max(batch_size, 1)))

    def run(start: int):
        stop = start + batch_size
        return greedy_decode_batch(
            model, sources[start:stop], domains[start:stop], max_len, trace,
            examples=np.arange(start, min(stop, len(sources))),
        )

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(s) for s in starts]

    outputs = [out for chunk, _ in results for out in chunk]
    merged = GateTrace.merge(t for _, t in results) if trace else None
    return outputs, merged
