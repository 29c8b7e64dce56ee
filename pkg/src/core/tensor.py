"""
Dense tensor value type with a reverse-mode gradient tape

Tensors are immutable: the numpy buffer is marked read-only on construction and
every operation returns a new Tensor. Operations record a GradRecord (parents plus
a backward closure) while gradient recording is enabled for the current thread.
"""
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .exceptions import NonFiniteError, TensorShapeError
from ..utils.logging import get_logger

logger = get_logger(__name__)

MAX_RANK = 4

_state = threading.local()


def get_dtype() -> np.dtype:
    """Arithmetic precision of the current thread (float32 unless overridden)"""
    return getattr(_state, "dtype", np.dtype(np.float32))


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def compute_dtype(dtype) -> Iterator[None]:
    """Run operations in the given floating precision on this thread"""
    previous = get_dtype()
    _state.dtype = np.dtype(dtype)
    try:
        yield
    finally:
        _state.dtype = previous


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording on this thread"""
    previous = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(frozen=True)
class GradRecord:
    """Tape entry: how an output maps its gradient back onto its parents"""
    parents: Tuple["Tensor", ...]
    backward: BackwardFn
    op: str


class Tensor:
    """Row-major array of rank 0-4 with optional gradient record"""

    __slots__ = ("data", "requires_grad", "record", "grad")

    def __init__(self, data, requires_grad: bool = False):
        array = np.array(data, dtype=get_dtype(), copy=True)
        self._init(array, requires_grad, None)

    def _init(self, array: np.ndarray, requires_grad: bool, record: Optional[GradRecord]) -> None:
        if array.ndim > MAX_RANK:
            raise TensorShapeError(f"rank {array.ndim} exceeds the supported maximum of {MAX_RANK}")
        array.setflags(write=False)
        self.data = array
        self.requires_grad = requires_grad
        self.record = record
        self.grad: Optional[np.ndarray] = None

    @classmethod
    def wrap(
        cls,
        array: np.ndarray,
        op: str,
        parents: Sequence["Tensor"] = (),
        backward: Optional[BackwardFn] = None,
    ) -> "Tensor":
        """Take ownership of a freshly computed array (no copy) and record its tape entry"""
        array = np.asarray(array, dtype=get_dtype())
        if not np.isfinite(array).all():
            raise NonFiniteError(f"{op} produced non-finite values (shape {array.shape})")
        out = cls.__new__(cls)
        needs_grad = is_grad_enabled() and backward is not None and any(p.requires_grad for p in parents)
        record = GradRecord(tuple(parents), backward, op) if needs_grad else None
        out._init(array, needs_grad, record)
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def rank(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def value(self) -> np.ndarray:
        """Data in the current thread's compute precision"""
        dtype = get_dtype()
        return self.data if self.data.dtype == dtype else self.data.astype(dtype)

    def item(self) -> float:
        if self.data.size != 1:
            raise TensorShapeError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def backward(self) -> None:
        """Populate .grad on every leaf that requires gradients"""
        leaves = [node for node in _topological_order(self) if node.record is None and node.requires_grad]
        for leaf, grad in zip(leaves, gradients(self, leaves)):
            leaf.grad = grad

    # Operator sugar delegates to the kernels module
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __repr__(self) -> str:
        grad_note = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{grad_note})"


def as_tensor(value) -> Tensor:
    """Wrap scalars/arrays as constant tensors; tensors pass through"""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root: Tensor) -> List[Tensor]:
    """Parents before children; iterative so deep graphs do not hit the recursion limit"""
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if node.record is not None:
            for parent in reversed(node.record.parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
    return order


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> List[np.ndarray]:
    """
    Reverse-mode gradients of a scalar loss with respect to the given tensors

    Tensors the loss does not depend on receive zero gradients.
    """
    if loss.size != 1:
        raise TensorShapeError(f"gradients() needs a scalar loss, got shape {loss.shape}")

    accumulated: Dict[int, np.ndarray] = {}
    if loss.requires_grad:
        accumulated[id(loss)] = np.ones(loss.shape, dtype=loss.data.dtype)
        for node in reversed(_topological_order(loss)):
            grad = accumulated.get(id(node))
            if grad is None or node.record is None:
                continue
            parent_grads = node.record.backward(grad)
            for parent, parent_grad in zip(node.record.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                parent_grad = np.asarray(parent_grad).reshape(parent.shape)
                key = id(parent)
                if key in accumulated:
                    accumulated[key] = accumulated[key] + parent_grad
                else:
                    accumulated[key] = parent_grad

    results = []
    for tensor in wrt:
        grad = accumulated.get(id(tensor))
        if grad is None:
            grad = np.zeros(tensor.shape, dtype=tensor.data.dtype)
        results.append(np.asarray(grad, dtype=tensor.data.dtype))
    return results
