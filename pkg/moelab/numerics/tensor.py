"""
Tensor Engine
=============

Dense numpy-backed tensors with reverse-mode differentiation:
- Tensor: data, requires_grad, accumulated grad, backward closure
- ComputationTape: nodes reachable from a loss in creation order
- Modes: no_grad(), counting() (multiply-accumulate counter), debug checks
- Process-wide default precision (float64 unless switched)
"""

import itertools
import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import ContractError, NumericError
from ..core.validation import Precision

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# =============================================================================
# Modes
# =============================================================================

_local = threading.local()
_process = {"precision": Precision.FLOAT64, "debug_checks": False, "rng": np.random.default_rng(0)}
DTYPES = {Precision.FLOAT64: np.float64, Precision.FLOAT32: np.float32}


def get_default_dtype() -> type:
    return DTYPES[_process["precision"]]


def get_default_precision() -> Precision:
    return _process["precision"]


def set_default_dtype(precision: Union[Precision, str]) -> None:
    try:
        _process["precision"] = Precision(precision)
    except ValueError:
        raise ContractError(f"unsupported precision {precision!r}") from None


def set_debug_checks(enabled: bool) -> None:
    _process["debug_checks"] = bool(enabled)


def debug_checks_enabled() -> bool:
    return _process["debug_checks"]


def seed_stochastic(seed: int) -> None:
    """Seed the generator used by stochastic ops that are not handed one"""
    _process["rng"] = np.random.default_rng(seed)


def stochastic_rng() -> np.random.Generator:
    return _process["rng"]


def grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


class MacCounter:
    """Multiply-accumulate tally for one counting() block"""

    def __init__(self):
        self.macs = 0
        self.by_op = {}

    def add(self, op: str, macs: int) -> None:
        self.macs += macs
        self.by_op[op] = self.by_op.get(op, 0) + macs


@contextmanager
def counting() -> Iterator[MacCounter]:
    """Count forward multiply-accumulates of matmul/bmm inside the block"""
    counter = MacCounter()
    stack = getattr(_local, "counters", None)
    if stack is None:
        stack = _local.counters = []
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.pop()


def count_macs(op: str, macs: int) -> None:
    for counter in getattr(_local, "counters", ()):
        counter.add(op, int(macs))


def check_finite(data: np.ndarray, op: str) -> None:
    if _process["debug_checks"] and data.size and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite value produced by {op}", details={"op": op})


# =============================================================================
# Tensor
# =============================================================================

class Tensor:
    """n-dimensional array participating in a reverse-mode graph"""

    _ids = itertools.count()

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=get_default_dtype())
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._seq = next(Tensor._ids)

    # -------------------------------------------------------------------------
    # Construction helpers
    # -------------------------------------------------------------------------

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, backward: BackwardFn) -> "Tensor":
        check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = ""
        out._op = op
        out._seq = next(Tensor._ids)
        out.requires_grad = grad_enabled() and any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    @classmethod
    def zeros(cls, *shape: int, requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(shape), requires_grad=requires_grad)

    # -------------------------------------------------------------------------
    # Accessors
    # -------------------------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{op})"

    # -------------------------------------------------------------------------
    # Arithmetic sugar (delegates to ops)
    # -------------------------------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from . import ops
        return ops.matmul(self, other)

    # -------------------------------------------------------------------------
    # Differentiation
    # -------------------------------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every requires_grad leaf reachable from this scalar"""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        ComputationTape.record(self).replay(self)


# =============================================================================
# Computation Tape
# =============================================================================

@dataclass
class ComputationTape:
    """Nodes reachable from a root, in creation (topological) order"""

    nodes: List[Tensor]

    @classmethod
    def record(cls, root: Tensor) -> "ComputationTape":
        seen = {id(root)}
        stack = [root]
        nodes = []
        while stack:
            node = stack.pop()
            nodes.append(node)
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append(parent)
        nodes.sort(key=lambda t: t._seq)
        return cls(nodes=nodes)

    def replay(self, root: Tensor) -> None:
        """Visit nodes in reverse topological order, each exactly once"""
        pending = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = np.array(g, copy=True) if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = pg if key not in pending else pending[key] + pg
