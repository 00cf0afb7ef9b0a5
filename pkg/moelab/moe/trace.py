"""
Gate Traces
===========

Per-layer, per-token routing records:
- full gate distribution, selected experts (rank order), renormalized weights
- domain id in effect, example index and position of every non-pad token
- deterministic merge of per-worker traces (layer, then position)
- columnar CSV and compressed binary (.npz) serialization
"""

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import CorpusIOError, DataError

CSV_COLUMNS = ("layer", "position", "domain", "expert_rank", "expert_id", "weight")
STACK_ORDER = {"encoder": 0, "decoder": 1}


def layer_sort_key(layer: str) -> Tuple[int, int]:
    stack, _, index = layer.partition(".")
    return STACK_ORDER.get(stack, 2), int(index or 0)


@dataclass
class LayerTrace:
    """Routing decisions of one SMoE layer for a set of tokens"""

    layer: str
    examples: np.ndarray   # [m] example index within the traced batch or dataset
    positions: np.ndarray  # [m]
    domains: np.ndarray    # [m]
    dist: np.ndarray       # [m x N]
    indices: np.ndarray    # [m x k], rank order
    weights: np.ndarray    # [m x k]

    @property
    def stack(self) -> str:
        return self.layer.partition(".")[0]

    @property
    def expert_count(self) -> int:
        return self.dist.shape[1]

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def concatenate(cls, layer: str, chunks: Sequence["LayerTrace"]) -> "LayerTrace":
        merged = cls(
            layer=layer,
            examples=np.concatenate([c.examples for c in chunks]),
            positions=np.concatenate([c.positions for c in chunks]),
            domains=np.concatenate([c.domains for c in chunks]),
            dist=np.concatenate([c.dist for c in chunks]),
            indices=np.concatenate([c.indices for c in chunks]),
            weights=np.concatenate([c.weights for c in chunks]),
        )
        order = np.lexsort((merged.examples, merged.positions))
        return cls(
            layer=layer,
            examples=merged.examples[order],
            positions=merged.positions[order],
            domains=merged.domains[order],
            dist=merged.dist[order],
            indices=merged.indices[order],
            weights=merged.weights[order],
        )


class GateTrace:
    """Routing records of every SMoE layer; chunks may arrive in any order"""

    def __init__(self):
        self._chunks: Dict[str, List[LayerTrace]] = {}

    def add(self, chunk: LayerTrace) -> None:
        if len(chunk):
            self._chunks.setdefault(chunk.layer, []).append(chunk)

    def extend(self, other: "GateTrace", example_offset: int = 0) -> None:
        for chunks in other._chunks.values():
            for chunk in chunks:
                if example_offset:
                    chunk = LayerTrace(
                        chunk.layer, chunk.examples + example_offset, chunk.positions,
                        chunk.domains, chunk.dist, chunk.indices, chunk.weights,
                    )
                self.add(chunk)

    @classmethod
    def merge(cls, traces: Iterable["GateTrace"], offsets: Optional[Iterable[int]] = None) -> "GateTrace":
        """Combine worker traces; result order depends only on content"""
        merged = cls()
        traces = list(traces)
        offsets = list(offsets) if offsets is not None else [0] * len(traces)
        for trace, offset in zip(traces, offsets):
            merged.extend(trace, offset)
        return merged

    @property
    def layers(self) -> List[str]:
        return sorted(self._chunks, key=layer_sort_key)

    def layer(self, name: str) -> LayerTrace:
        if name not in self._chunks:
            raise DataError(f"no trace recorded for layer {name}")
        return LayerTrace.concatenate(name, self._chunks[name])

    def merged_layers(self) -> List[LayerTrace]:
        return [self.layer(name) for name in self.layers]

    def is_empty(self) -> bool:
        return not self._chunks

    def __len__(self) -> int:
        return sum(len(c) for chunks in self._chunks.values() for c in chunks)

    # -------------------------------------------------------------------------
    # Serialization
    # -------------------------------------------------------------------------

    def to_csv(self, target: Union[str, Path, io.TextIOBase], domain_names: Optional[Sequence[str]] = None) -> None:
        """One row per (token, rank): layer, position, domain, expert_rank, expert_id, weight"""

        def write(handle):
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for lt in self.merged_layers():
                for i in range(len(lt)):
                    domain = int(lt.domains[i])
                    label = domain_names[domain] if domain_names else domain
                    for rank in range(lt.indices.shape[1]):
                        writer.writerow([
                            lt.layer, int(lt.positions[i]), label, rank,
                            int(lt.indices[i, rank]), repr(float(lt.weights[i, rank])),
                        ])

        if isinstance(target, (str, Path)):
            try:
                with open(target, "w", encoding="utf-8", newline="") as handle:
                    write(handle)
            except OSError as e:
                raise CorpusIOError(target, str(e))
        else:
            write(target)

    def save(self, path: Union[str, Path]) -> None:
        """Compact binary form: one array group per layer inside an .npz"""
        arrays = {}
        layers = self.merged_layers()
        for i, lt in enumerate(layers):
            for field in ("examples", "positions", "domains", "dist", "indices", "weights"):
                arrays[f"{i}.{field}"] = getattr(lt, field)
        arrays["layers"] = np.frombuffer(json.dumps([lt.layer for lt in layers]).encode("utf-8"), dtype=np.uint8)
        try:
            with open(path, "wb") as handle:
                np.savez_compressed(handle, **arrays)
        except OSError as e:
            raise CorpusIOError(path, str(e))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "GateTrace":
        try:
            with np.load(path) as data:
                names = json.loads(bytes(data["layers"]).decode("utf-8"))
                trace = cls()
                for i, name in enumerate(names):
                    trace.add(LayerTrace(name, *(data[f"{i}.{f}"] for f in
                                                 ("examples", "positions", "domains", "dist", "indices", "weights"))))
                return trace
        except OSError as e:
            raise CorpusIOError(path, str(e))
