"""Dense tensor value with reverse-mode gradient tape.

A ``Tensor`` wraps a row-major numpy array. Tensors produced by ops record
their parents and a backward closure whenever any input tracks gradients;
``backward()`` walks that graph in reverse topological order.
"""
import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from src.types import FloatArray

_DEFAULT_DTYPE: type = np.float32

BackwardFn = Callable[[FloatArray], Sequence[Optional[FloatArray]]]


class NumericError(Exception):
    """Base class for numeric-core failures."""


class ShapeMismatchError(NumericError, ValueError):
    """Raised when operand shapes are incompatible for an op."""

    def __init__(self, op: str, shape_a: tuple, shape_b: tuple, detail: str = ""):
        self.op = op
        self.shape_a = tuple(shape_a)
        self.shape_b = tuple(shape_b)
        msg = f"{op}: incompatible shapes {self.shape_a} and {self.shape_b}"
        if detail:
            msg = f"{msg} ({detail})"
        super().__init__(msg)


class NonFiniteError(NumericError, FloatingPointError):
    """Raised when an op produces NaN or infinity."""

    def __init__(self, op: str):
        self.op = op
        super().__init__(f"{op}: produced non-finite values")


def get_default_dtype() -> type:
    return _DEFAULT_DTYPE


def set_default_dtype(dtype: type) -> None:
    global _DEFAULT_DTYPE
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"Unsupported dtype {dtype}; use np.float32 or np.float64")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def float64_mode() -> Iterator[None]:
    """Create tensors in 64-bit inside the block (gradient verification)."""
    previous = _DEFAULT_DTYPE
    set_default_dtype(np.float64)
    try:
        yield
    finally:
        set_default_dtype(previous)


class Tensor:
    """Dense array with optional gradient tracking."""

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        name: Optional[str] = None,
        _parents: tuple = (),
        _backward: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        arr = np.asarray(data)
        if arr.dtype != _DEFAULT_DTYPE:
            arr = arr.astype(_DEFAULT_DTYPE)
        if not arr.flags.c_contiguous:
            arr = arr.copy(order="C")
        self.data: FloatArray = arr
        self.grad: Optional[FloatArray] = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # ------------------------------------------------------------------
    # Introspection
    # ------------------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tracks_gradient(self) -> bool:
        return self.requires_grad

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise NumericError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> FloatArray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return (f"Tensor(shape={self.shape}, op={self.op!r}, "
                f"requires_grad={self.requires_grad}{label})")

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def backward(self, grad: Optional[FloatArray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``."""
        if not self.requires_grad:
            raise NumericError("backward() called on a tensor that does not track gradients")
        if grad is None:
            if self.data.size != 1:
                raise NumericError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        pending: dict[int, FloatArray] = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + pg
                else:
                    pending[key] = pg

    # ------------------------------------------------------------------
    # Operator sugar (delegates to src.numeric.ops)
    # ------------------------------------------------------------------

    def __add__(self, other):
        from src.numeric import ops
        return ops.add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from src.numeric import ops
        return ops.sub(self, as_tensor(other))

    def __rsub__(self, other):
        from src.numeric import ops
        return ops.sub(as_tensor(other), self)

    def __mul__(self, other):
        from src.numeric import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from src.numeric import ops
        return ops.scale(self, -1.0)

    def __truediv__(self, other):
        from src.numeric import ops
        if not isinstance(other, (int, float)):
            raise TypeError("Tensor division is only defined for python scalars")
        return ops.scale(self, 1.0 / float(other))

    def __matmul__(self, other):
        from src.numeric import ops
        return ops.matmul(self, as_tensor(other))


def as_tensor(value) -> Tensor:
    """Wrap arrays and scalars as constant tensors; tensors pass through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order
