"""
Inference Benchmark
===================

Wall-clock greedy decoding of a whole test set:
- batches grouped by a source-token budget and built before timing starts
- warmup passes, then timed repeats on a monotonic clock
- median, mean and coefficient of variation per (config, batch size)
- ratio tables against a baseline config; JSON lines output

Batch size is measured in source tokens.
"""

import hashlib
import json
import logging
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ContractError, CorpusIOError
from ..core.monitoring import environment_descriptor, host_load
from ..data.tasks import Example
from ..evaluation.decoding import default_max_len, greedy_decode_batch
from ..model.schema import EOS
from ..numerics import get_default_precision

logger = logging.getLogger(__name__)

CV_WARNING = 0.2


@dataclass
class BenchResult:
    config_id: str
    batch_tokens: int
    repeats: int
    times: List[float]
    decoded_tokens: int
    testset_digest: str
    environment: Dict[str, Any] = field(default_factory=dict)

    @property
    def median(self) -> float:
        return statistics.median(self.times)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.times)

    @property
    def cv(self) -> float:
        if len(self.times) < 2 or self.mean == 0:
            return 0.0
        return statistics.pstdev(self.times) / self.mean

    @property
    def tokens_per_sec(self) -> float:
        return self.decoded_tokens / self.median if self.median > 0 else float("inf")

    def to_dict(self) -> Dict[str, Any]:
        payload = asdict(self)
        payload.update({"median": self.median, "mean": self.mean, "cv": self.cv, "tokens_per_sec": self.tokens_per_sec})
        return payload


class NullModel:
    """Decoder stand-in that emits EOS immediately; measures harness overhead"""

    def __init__(self, vocab_size: int = 3):
        self.vocab_size = max(vocab_size, EOS + 1)

    def prepare_source(self, source: Sequence[int], domain: int) -> List[int]:
        return list(source)

    def start_decoding(self, sources, domains, examples=None, trace=False):
        return _NullState(len(sources))

    def next_token_logits(self, state: "_NullState", prefix: np.ndarray) -> np.ndarray:
        logits = np.zeros((state.batch, self.vocab_size))
        logits[:, EOS] = 1.0
        return logits


@dataclass
class _NullState:
    batch: int
    trace: Any = None


# =============================================================================
# Batching
# =============================================================================

Prepared = Tuple[List[Tuple[int, ...]], List[int]]


def testset_digest(testset: Sequence[Example]) -> str:
    h = hashlib.sha1()
    for e in testset:
        h.update(repr((e.source, e.target, e.assigned_domain)).encode("utf-8"))
    return h.hexdigest()[:16]


def token_batches(testset: Sequence[Example], batch_tokens: int) -> List[Prepared]:
    """Consecutive examples grouped until the source-token budget would be exceeded"""
    if batch_tokens < 1:
        raise ContractError(f"batch_tokens must be positive, got {batch_tokens}")
    batches: List[Prepared] = []
    sources: List[Tuple[int, ...]] = []
    domains: List[int] = []
    used = 0
    for e in testset:
        if sources and used + len(e.source) > batch_tokens:
            batches.append((sources, domains))
            sources, domains, used = [], [], 0
        sources.append(e.source)
        domains.append(e.assigned_domain)
        used += len(e.source)
    if sources:
        batches.append((sources, domains))
    return batches


def _decode_all(model: Any, batches: Sequence[Prepared], max_len: int, workers: int) -> int:
    def run(batch: Prepared) -> int:
        outputs, _ = greedy_decode_batch(model, batch[0], batch[1], max_len)
        return sum(len(o) for o in outputs)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return sum(pool.map(run, batches))
    return sum(run(b) for b in batches)


# =============================================================================
# Benchmark
# =============================================================================

def benchmark_inference(
    model: Any,
    testset: Sequence[Example],
    batch_tokens: int,
    repeats: int = 3,
    warmup: int = 1,
    config_id: str = "model",
    max_len: Optional[int] = None,
    workers: int = 1,
) -> BenchResult:
    """Time `repeats` full greedy decodes of testset after `warmup` untimed ones"""
    if not testset:
        raise ContractError("cannot benchmark an empty test set")
    if repeats < 1 or warmup < 0:
        raise ContractError(f"need repeats >= 1 and warmup >= 0, got {repeats} / {warmup}")
    batches = token_batches(testset, batch_tokens)
    max_len = max_len or default_max_len([e.source for e in testset])

    for _ in range(warmup):
        _decode_all(model, batches, max_len, workers)
    logger.debug(f"{config_id}: host load before timing {host_load()}")

    times: List[float] = []
    decoded: List[int] = []
    for _ in range(repeats):
        started = time.perf_counter()
        decoded.append(_decode_all(model, batches, max_len, workers))
        times.append(time.perf_counter() - started)
    if len(set(decoded)) != 1:
        raise ContractError(f"decoded token counts differ across repeats: {decoded}")

    result = BenchResult(
        config_id=config_id,
        batch_tokens=batch_tokens,
        repeats=repeats,
        times=times,
        decoded_tokens=decoded[0],
        testset_digest=testset_digest(testset),
        environment=environment_descriptor(
            get_default_precision().value, workers,
            extra={"batches": len(batches), "mode": "multi-worker" if workers > 1 else "single-worker"},
        ),
    )
    if repeats >= 5 and result.cv > CV_WARNING:
        logger.warning(f"{config_id} @ {batch_tokens} tokens: CV {result.cv:.1%} exceeds {CV_WARNING:.0%}")
    logger.info(
        f"{config_id} @ {batch_tokens} tokens: median {result.median:.4f}s, "
        f"mean {result.mean:.4f}s, CV {result.cv:.1%}, {result.tokens_per_sec:.1f} tokens/s"
    )
    return result


def sweep(
    models: Mapping[str, Any],
    testset: Sequence[Example],
    batch_sizes: Sequence[int],
    repeats: int = 3,
    warmup: int = 1,
    workers: int = 1,
) -> List[BenchResult]:
    """One result per (config, batch size), configs in the given order"""
    return [
        benchmark_inference(model, testset, size, repeats, warmup, config_id=name, workers=workers)
        for name, model in models.items()
        for size in batch_sizes
    ]


def compare_configs(results: Sequence[BenchResult], baseline: Optional[str] = None) -> List[Dict[str, Any]]:
    """Median-time ratio of every result against the baseline config"""
    if not results:
        raise ContractError("nothing to compare")
    digests = {r.testset_digest for r in results}
    sizes = {r.batch_tokens for r in results}
    if len(digests) > 1 or len(sizes) > 1:
        raise ContractError(f"results are not comparable: test sets {sorted(digests)}, batch sizes {sorted(sizes)}")
    baseline = baseline or results[0].config_id
    reference = next((r for r in results if r.config_id == baseline), None)
    if reference is None:
        raise ContractError(f"baseline {baseline} is not among the results")
    return [
        {
            "config_id": r.config_id,
            "batch_tokens": r.batch_tokens,
            "median": r.median,
            "ratio": r.median / reference.median if reference.median > 0 else float("nan"),
            "baseline": baseline,
            "host": r.environment.get("host", ""),
        }
        for r in results
    ]


def write_jsonl(path: Union[str, Path], results: Sequence[BenchResult], append: bool = False) -> None:
    try:
        with open(path, "a" if append else "w", encoding="utf-8") as handle:
            for r in results:
                handle.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
    except OSError as e:
        raise CorpusIOError(path, str(e))
