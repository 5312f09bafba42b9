"""Differentiable primitives over :class:`~src.numeric.tensor.Tensor`.

Every op computes its forward value with numpy, refuses non-finite results,
and (when any input tracks gradients) attaches a closure returning one
gradient per parent. Batched leading axes are allowed wherever the model
needs them; broadcasting is limited to bias/scalar style operands.
"""
import math
from typing import Optional, Sequence

import numpy as np

from src.numeric.tensor import NonFiniteError, ShapeMismatchError, Tensor, as_tensor
from src.types import FloatArray, IntArray

_GELU_C = math.sqrt(2.0 / math.pi)
NORM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _result(data: FloatArray, parents: tuple, backward, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(op)
    tracked = any(p.requires_grad for p in parents)
    if not tracked:
        return Tensor(data, op=op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, op=op)


def _unbroadcast(grad: FloatArray, shape: tuple) -> FloatArray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatchError(op, a.shape, b.shape) from None


def _swap_last(x: FloatArray) -> FloatArray:
    return np.swapaxes(x, -1, -2)


# ---------------------------------------------------------------------------
# Elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        return (g * c,)

    return _result(a.data * c, (a,), backward, "scale")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)

    def backward(g):
        return (g * out,)

    return _result(out, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)

    def backward(g):
        return (g / a.data,)

    return _result(out, (a,), backward, "log")


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner),)

    return _result(out, (a,), backward, "gelu")


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 1 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError("matmul", a.shape, b.shape, "inner dimensions differ")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = _unbroadcast(np.matmul(g, _swap_last(b.data)), a.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = np.outer(a.data, g) if a.ndim == 1 else np.matmul(_swap_last(a.data), g)
            gb = _unbroadcast(gb, b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with weight stored (in, out)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


# ---------------------------------------------------------------------------
# Normalisation
# ---------------------------------------------------------------------------

def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Per-row layer normalisation over the last axis (population variance)."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeMismatchError("layer_norm", x.shape, gamma.shape, "affine must match last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (
                gxhat
                - gxhat.mean(axis=-1, keepdims=True)
                - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True)
            )
        ggamma = _unbroadcast(g * xhat, gamma.shape) if gamma.requires_grad else None
        gbeta = _unbroadcast(g, beta.shape) if beta.requires_grad else None
        return gx, ggamma, gbeta

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def l2_normalize(x: Tensor, eps: float = NORM_EPS) -> Tensor:
    """Row-wise ``v / (‖v‖ + eps)`` over the last axis."""
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    denom = norm + eps
    out = x.data / denom

    def backward(g):
        dot = (g * x.data).sum(axis=-1, keepdims=True)
        safe_norm = np.where(norm > 0, norm, 1.0)
        radial = np.where(norm > 0, x.data * dot / (safe_norm * denom * denom), 0.0)
        return (g / denom - radial,)

    return _result(out, (x,), backward, "l2_normalize")


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    """Numerically stable log-softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def backward(g):
        probs = np.exp(out)
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return _result(out, (x,), backward, "log_softmax")


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def sum_(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else x.shape[axis]
    out = x.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward, "mean")


# ---------------------------------------------------------------------------
# Indexing and layout
# ---------------------------------------------------------------------------

def _row_index(x: Tensor, idx: IntArray, op: str):
    idx = np.asarray(idx, dtype=np.int64)
    if x.ndim < 2:
        raise ShapeMismatchError(op, x.shape, idx.shape, "need at least (rows, features)")
    rows = x.shape[-2]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"{op}: index out of range for {rows} rows")
    if idx.ndim == 1:
        return (slice(None),) * (x.ndim - 2) + (idx,)
    if idx.ndim == 2 and x.ndim == 3 and idx.shape[0] == x.shape[0]:
        return (np.arange(x.shape[0])[:, None], idx)
    raise ShapeMismatchError(op, x.shape, idx.shape, "index must be (k,) or (batch, k)")


def gather(x: Tensor, idx: IntArray) -> Tensor:
    """Gather rows (axis -2) by an index list, per batch item when ``idx`` is 2-D."""
    key = _row_index(x, idx, "gather")
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _result(out, (x,), backward, "gather")


def embedding(table: Tensor, ids: IntArray) -> Tensor:
    """Look up rows of ``table`` for an integer id array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding: id out of range for vocabulary of {table.shape[0]}")
    out = table.data[ids]

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _result(out, (table,), backward, "embedding")


def concat(xs: Sequence[Tensor], axis: int = -2) -> Tensor:
    """Concatenate along ``axis`` (the sequence axis by default)."""
    xs = [as_tensor(x) for x in xs]
    ref = xs[0]
    for other in xs[1:]:
        if other.ndim != ref.ndim:
            raise ShapeMismatchError("concat", ref.shape, other.shape, "rank differs")
        for ax in range(ref.ndim):
            if ax != axis % ref.ndim and other.shape[ax] != ref.shape[ax]:
                raise ShapeMismatchError("concat", ref.shape, other.shape)
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(out, tuple(xs), backward, "concat")


def reshape(x: Tensor, shape: tuple) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError("reshape", x.shape, shape) from None

    def backward(g):
        return (g.reshape(x.shape),)

    return _result(out, (x,), backward, "reshape")


def transpose(x: Tensor, axes: tuple) -> Tensor:
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError("transpose", x.shape, tuple(axes), "not a permutation")
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return _result(np.ascontiguousarray(out), (x,), backward, "transpose")


def expand(x: Tensor, shape: tuple) -> Tensor:
    """Broadcast ``x`` to ``shape`` (used to tile mask tokens)."""
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError:
        raise ShapeMismatchError("expand", x.shape, shape) from None

    def backward(g):
        return (_unbroadcast(g, x.shape),)

    return _result(out, (x,), backward, "expand")
