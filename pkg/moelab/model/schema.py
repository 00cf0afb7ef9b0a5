"""
Domain Schema
=============

Ordered domains (generic first) with their tag tokens, sampling
probabilities and synthetic tasks, plus the vocabulary layout:

    PAD=0, BOS=1, EOS=2, one tag per domain in schema order, then content.
"""

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.errors import ConfigError, ContractError, DomainLookupError

PAD = 0
BOS = 1
EOS = 2
SPECIAL_TOKENS = 3
GENERIC = "generic"


@dataclass(frozen=True)
class DomainSpec:
    name: str
    probability: float
    seen: bool
    task: Optional[Any] = None  # data.tasks.DomainTask

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "probability": self.probability,
            "seen": self.seen,
            "task": self.task.to_dict() if self.task is not None else None,
        }


class DomainSchema:
    """Domain identities and the vocabulary layout they imply"""

    def __init__(self, domains: Sequence[DomainSpec], content_size: int):
        self.domains: List[DomainSpec] = list(domains)
        self.content_size = int(content_size)
        problems = []
        if not self.domains or self.domains[0].name != GENERIC:
            problems.append("the first domain must be 'generic'")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            problems.append(f"duplicate domain names in {names}")
        probs = np.array([d.probability for d in self.domains], dtype=float)
        if np.any(probs < 0):
            problems.append("sampling probabilities must be non-negative")
        if self.domains and abs(probs.sum() - 1.0) > 1e-9:
            problems.append(f"sampling probabilities sum to {probs.sum():.12g}, not 1")
        if problems:
            raise ConfigError("invalid domain schema", violations=problems)
        self._index = {name: i for i, name in enumerate(names)}

    # -------------------------------------------------------------------------
    # Lookups
    # -------------------------------------------------------------------------

    @property
    def names(self) -> List[str]:
        return [d.name for d in self.domains]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([d.probability for d in self.domains], dtype=float)

    @property
    def seen_ids(self) -> List[int]:
        return [i for i, d in enumerate(self.domains) if d.seen and i != 0]

    @property
    def unseen_ids(self) -> List[int]:
        return [i for i, d in enumerate(self.domains) if not d.seen]

    def __len__(self) -> int:
        return len(self.domains)

    def index(self, domain: Any) -> int:
        """Domain id for a name or id; unknown → DomainLookupError"""
        if isinstance(domain, (int, np.integer)) and not isinstance(domain, bool):
            if 0 <= int(domain) < len(self.domains):
                return int(domain)
        elif domain in self._index:
            return self._index[domain]
        raise DomainLookupError(domain, self.names)

    def name(self, domain_id: int) -> str:
        return self.domains[self.index(domain_id)].name

    def task(self, domain: Any):
        return self.domains[self.index(domain)].task

    # -------------------------------------------------------------------------
    # Vocabulary
    # -------------------------------------------------------------------------

    def tag_id(self, domain: Any) -> int:
        return SPECIAL_TOKENS + self.index(domain)

    @property
    def first_content_id(self) -> int:
        return SPECIAL_TOKENS + len(self.domains)

    @property
    def vocab_size(self) -> int:
        return self.first_content_id + self.content_size

    def is_tag(self, token: int) -> bool:
        return SPECIAL_TOKENS <= token < self.first_content_id

    def prepend_domain_tag(self, source: Sequence[int], domain: Any) -> List[int]:
        """[t1 .. EOS] -> [TAG_d, t1 .. EOS]"""
        tag = self.tag_id(domain)
        source = list(source)
        if not source or source[-1] != EOS:
            raise ContractError("source must end with the end-of-sequence token")
        if self.is_tag(source[0]):
            raise ContractError(f"source already starts with tag token {source[0]}")
        return [tag] + source

    # -------------------------------------------------------------------------
    # Serialization
    # -------------------------------------------------------------------------

    def with_probabilities(self, probabilities: Sequence[float]) -> "DomainSchema":
        if len(probabilities) != len(self.domains):
            raise ConfigError(f"expected {len(self.domains)} probabilities, got {len(probabilities)}")
        return DomainSchema(
            [DomainSpec(d.name, float(p), d.seen, d.task) for d, p in zip(self.domains, probabilities)],
            self.content_size,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {"content_size": self.content_size, "domains": [d.to_dict() for d in self.domains]}

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "DomainSchema":
        from ..data.tasks import DomainTask

        domains = [
            DomainSpec(
                name=d["name"],
                probability=float(d["probability"]),
                seen=bool(d["seen"]),
                task=DomainTask.from_dict(d["task"]) if d.get("task") else None,
            )
            for d in payload["domains"]
        ]
        return cls(domains, payload["content_size"])

    def schema_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def prepend_domain_tag(source: Sequence[int], domain: Any, schema: DomainSchema) -> List[int]:
    return schema.prepend_domain_tag(source, domain)
