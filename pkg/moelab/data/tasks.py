"""
Synthetic Domain Tasks
======================

Token-substitution transduction tasks that make multi-domain effects
measurable at desk scale:
- every seen domain owns a content range mapped by a seeded permutation
- a shared range is mapped differently per domain (a cyclic shift by the
  domain's 1-based index), so only the label disambiguates it
- the generic domain covers every seen range with its owner's map and is
  the identity on the shared range
- the first seen domain also owns an extra range the generic domain never
  covers; an unseen "<first>_related" domain draws from it
"""

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core.errors import ConfigError
from ..core.validation import DataConfig, MixtureMode
from ..model.schema import EOS, GENERIC, SPECIAL_TOKENS, DomainSchema, DomainSpec

logger = logging.getLogger(__name__)


# =============================================================================
# Types
# =============================================================================

@dataclass(frozen=True)
class DomainTask:
    """Content pools, shared range, substitution map and length bounds of one domain"""

    name: str
    pools: Tuple[Tuple[int, ...], ...]  # one pool is chosen per example
    shared: Tuple[int, ...]
    mapping: Dict[int, int] = field(hash=False, compare=True)
    min_len: int = 3
    max_len: int = 8

    def __post_init__(self):
        if not self.pools or any(len(p) == 0 for p in self.pools):
            raise ConfigError(f"domain {self.name}: content ranges must be non-empty")
        if self.min_len < 1 or self.max_len < self.min_len:
            raise ConfigError(f"domain {self.name}: invalid length bounds [{self.min_len}, {self.max_len}]")
        keys = set(self.mapping)
        if set(self.mapping.values()) != keys:
            raise ConfigError(f"domain {self.name}: substitution map is not a bijection")
        missing = set(self.vocabulary()) - keys
        if missing:
            raise ConfigError(f"domain {self.name}: map misses tokens {sorted(missing)[:5]}")

    def vocabulary(self) -> List[int]:
        tokens = set(self.shared)
        for pool in self.pools:
            tokens.update(pool)
        return sorted(tokens)

    def apply(self, content: Sequence[int]) -> List[int]:
        return [self.mapping[t] for t in content]

    def inverse(self) -> Dict[int, int]:
        return {v: k for k, v in self.mapping.items()}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "pools": [list(p) for p in self.pools],
            "shared": list(self.shared),
            "mapping": [[int(k), int(v)] for k, v in sorted(self.mapping.items())],
            "min_len": self.min_len,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DomainTask":
        return cls(
            name=payload["name"],
            pools=tuple(tuple(p) for p in payload["pools"]),
            shared=tuple(payload["shared"]),
            mapping={int(k): int(v) for k, v in payload["mapping"]},
            min_len=int(payload["min_len"]),
            max_len=int(payload["max_len"]),
        )


@dataclass(frozen=True)
class Example:
    source: Tuple[int, ...]   # content + EOS
    target: Tuple[int, ...]   # mapped content + EOS
    true_domain: int
    assigned_domain: int


# =============================================================================
# Seeds
# =============================================================================

def derive_seed(base: int, *labels: Any) -> int:
    """Stable child seed for (base, labels...) independent of process hashing"""
    key = [int(base)] + [zlib.crc32(str(label).encode("utf-8")) for label in labels]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


# =============================================================================
# Generation
# =============================================================================

def generate_corpus(task: DomainTask, n: int, seed: int, domain_id: int = 0) -> List[Example]:
    """n i.i.d. examples; one pool per example, content uniform over pool + shared range"""
    if n < 0:
        raise ConfigError(f"example count must be non-negative, got {n}")
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(n):
        pool = task.pools[int(rng.integers(len(task.pools)))]
        choices = np.asarray(pool + task.shared)
        length = int(rng.integers(task.min_len, task.max_len + 1))
        content = [int(t) for t in rng.choice(choices, size=length)]
        examples.append(Example(
            source=tuple(content) + (EOS,),
            target=tuple(task.apply(content)) + (EOS,),
            true_domain=domain_id,
            assigned_domain=domain_id,
        ))
    return examples


def mixture_probabilities(sizes: Sequence[int], seen: Sequence[bool], mode: MixtureMode,
                          generic_share: float = 0.5) -> List[float]:
    """
    Sampling probability per schema domain (index 0 is generic).

    balanced: generic at generic_share, seen domains by corpus size
    natural: every domain by corpus size
    seen_only / generic_only: one side of the mixture
    Unseen domains always get 0.
    """
    sizes = np.asarray(sizes, dtype=float)
    seen_mask = np.asarray(seen, dtype=bool).copy()
    seen_mask[0] = False
    seen_sizes = np.where(seen_mask, sizes, 0.0)
    probs = np.zeros(len(sizes))
    mode = MixtureMode(mode)
    if mode == MixtureMode.GENERIC_ONLY or (mode == MixtureMode.BALANCED and seen_sizes.sum() == 0):
        probs[0] = 1.0
    elif mode == MixtureMode.SEEN_ONLY:
        if seen_sizes.sum() == 0:
            raise ConfigError("seen_only mixture needs non-empty seen corpora")
        probs = seen_sizes / seen_sizes.sum()
    elif mode == MixtureMode.NATURAL:
        weights = seen_sizes.copy()
        weights[0] = sizes[0]
        if weights.sum() == 0:
            raise ConfigError("natural mixture needs at least one non-empty corpus")
        probs = weights / weights.sum()
    else:
        probs = seen_sizes / seen_sizes.sum() * (1.0 - generic_share)
        probs[0] = generic_share
    return [float(p) for p in probs]


def build_synthetic_schema(cfg: DataConfig) -> DomainSchema:
    """Domain schema and tasks for the synthetic task family"""
    names = [GENERIC] + list(cfg.seen_names)
    related = f"{cfg.seen_names[0]}_related" if cfg.unseen_related else None
    domain_count = len(names) + (1 if related else 0)
    if cfg.shared_size <= cfg.seen_domains:
        logger.warning(
            f"shared range of {cfg.shared_size} tokens repeats shifts across {cfg.seen_domains} seen domains"
        )

    first = SPECIAL_TOKENS + domain_count
    cursor = first
    shared = tuple(range(cursor, cursor + cfg.shared_size))
    cursor += cfg.shared_size
    own: List[Tuple[int, ...]] = []
    for _ in cfg.seen_names:
        own.append(tuple(range(cursor, cursor + cfg.range_size)))
        cursor += cfg.range_size
    extra: Tuple[int, ...] = ()
    if related:
        extra = tuple(range(cursor, cursor + cfg.range_size))
        cursor += cfg.range_size

    rng = np.random.default_rng(derive_seed(cfg.data_seed, "maps"))
    range_maps: List[Dict[int, int]] = []
    for pool in own:
        range_maps.append(dict(zip(pool, (int(t) for t in rng.permutation(pool)))))
    extra_map = dict(zip(extra, (int(t) for t in rng.permutation(extra)))) if extra else {}

    def shifted(j: int) -> Dict[int, int]:
        return {shared[i]: shared[(i + j) % len(shared)] for i in range(len(shared))}

    tasks: List[DomainTask] = []
    generic_map = {t: t for t in shared}
    for m in range_maps:
        generic_map.update(m)
    tasks.append(DomainTask(GENERIC, tuple(own), shared, generic_map, cfg.min_len, cfg.max_len))
    for j, (name, pool, m) in enumerate(zip(cfg.seen_names, own, range_maps), start=1):
        mapping = {**m, **shifted(j)}
        pools = (pool,)
        if j == 1 and extra:
            mapping.update(extra_map)
            pools = (pool, extra)
        tasks.append(DomainTask(name, pools, shared, mapping, cfg.min_len, cfg.max_len))
    if related:
        first_task = tasks[1]
        tasks.append(DomainTask(related, (own[0] + extra,), shared, dict(first_task.mapping),
                                cfg.min_len, cfg.max_len))

    sizes = [cfg.generic_examples] + [cfg.train_examples] * cfg.seen_domains + ([0] if related else [])
    seen = [True] * (len(names)) + ([False] if related else [])
    probs = mixture_probabilities(sizes, seen, cfg.mixture, cfg.generic_share)
    domains = [DomainSpec(t.name, p, s, t) for t, p, s in zip(tasks, probs, seen)]
    return DomainSchema(domains, content_size=cursor - first)


def split_sizes(cfg: DataConfig, schema: DomainSchema, domain_id: int) -> Dict[str, int]:
    if not schema.domains[domain_id].seen:
        return {"train": 0, "valid": 0, "test": cfg.test_examples}
    train = cfg.generic_examples if domain_id == 0 else cfg.train_examples
    return {"train": train, "valid": cfg.valid_examples, "test": cfg.test_examples}


def relabel(example: Example, domain_id: int) -> Example:
    return replace(example, assigned_domain=domain_id)
