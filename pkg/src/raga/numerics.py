"""Dense float64 matrix ops with reverse-mode gradients.

Every op takes and returns :class:`Tensor` objects holding a 2-D array.
Calling :meth:`Tensor.backward` on a 1x1 result walks the recorded graph
in reverse topological order and writes ``grad`` on every
:class:`Parameter` reachable from it.

Subgradient conventions at kinks: ``relu`` and ``leaky_relu`` use the
positive-side slope (1) at exactly 0; ``abs`` uses 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.2


class DimensionError(ValueError):
    pass


class ContractError(RuntimeError):
    pass


class CheckInvalidError(RuntimeError):
    pass


def as_matrix(value, name: str = "value") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (scalars -> 1x1, vectors -> column)."""
    arr = np.array(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim != 2:
        raise DimensionError(f"{name}: expected a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


class Tensor:
    __slots__ = ("value", "grad", "_parents", "_backward", "requires_grad")

    def __init__(self, value, parents: Tuple["Tensor", ...] = (), backward: Optional[Callable] = None):
        self.value = value if parents else as_matrix(value)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward = backward
        self.requires_grad = any(p.requires_grad for p in parents)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.value.shape

    def __repr__(self):
        return f"{type(self).__name__}(shape={self.shape})"

    def backward(self):
        if self.shape != (1, 1):
            raise ContractError(f"backward needs a scalar (1x1) output, got shape {self.shape}")
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        for node in order:
            node.grad = None
        self.grad = np.ones((1, 1))
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                # never in place: backward rules may hand the same array to several parents
                parent.grad = g if parent.grad is None else parent.grad + g
        for node in order:
            if node.grad is None:
                node.grad = np.zeros_like(node.value)

    # Operator sugar; the functional forms below are the primary API.
    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


class Parameter(Tensor):
    """A trainable leaf; ``grad`` is reset by every backward pass that reaches it."""

    __slots__ = ()

    def __init__(self, value):
        super().__init__(value)
        self.requires_grad = True
        self.grad = np.zeros_like(self.value)


def constant(value) -> Tensor:
    return Tensor(value)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    axes = tuple(ax for ax in range(2) if shape[ax] == 1 and g.shape[ax] != 1)
    return g.sum(axis=axes, keepdims=True)


def _check_broadcast(op, a, b):
    for ax in range(2):
        if a.shape[ax] != b.shape[ax] and 1 not in (a.shape[ax], b.shape[ax]):
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _node(value, parents, backward) -> Tensor:
    return Tensor(value, tuple(parents), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    _check_broadcast("mul", a, b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.value * c, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    return _node(a.value + c, (a,), lambda g: (g,))


def one_minus(a: Tensor) -> Tensor:
    return _node(1.0 - a.value, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _node(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def sparse_dense_matmul(adj: sp.spmatrix, x: Tensor) -> Tensor:
    if adj.shape[1] != x.shape[0]:
        raise DimensionError(f"sparse_dense_matmul: cannot multiply {adj.shape} by {x.shape}")
    adj = sp.csr_matrix(adj)
    adj_t = adj.T.tocsr()
    return _node(np.asarray(adj @ x.value), (x,), lambda g: (np.asarray(adj_t @ g),))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols: row counts differ {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]
    return _node(np.concatenate([p.value for p in parts], axis=1), parts,
                 lambda g: tuple(np.split(g, splits, axis=1)))


def relu(a: Tensor) -> Tensor:
    mask = a.value >= 0
    # np.maximum keeps NaN visible so divergence is caught downstream
    return _node(np.maximum(a.value, 0.0), (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    mask = a.value >= 0
    d = np.where(mask, 1.0, slope)
    return _node(a.value * d, (a,), lambda g: (g * d,))


def sigmoid(a: Tensor) -> Tensor:
    # exp of a non-positive argument only
    z = np.exp(-np.abs(a.value))
    y = np.where(a.value >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _node(y, (a,), lambda g: (g * y * (1.0 - y),))


def abs_(a: Tensor) -> Tensor:
    s = np.sign(a.value)
    return _node(np.abs(a.value), (a,), lambda g: (g * s,))


def row_softmax(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _node(y, (a,), back)


def sum_all(a: Tensor) -> Tensor:
    return _node(a.value.sum().reshape(1, 1), (a,), lambda g: (np.full(a.shape, g[0, 0]),))


def row_sum(a: Tensor) -> Tensor:
    return _node(a.value.sum(axis=1, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g, a.shape).copy(),))


def _scatter_matrix(idx: np.ndarray, n: int) -> sp.csr_matrix:
    """``M`` with ``(M @ v)[s] = sum of v[e] over idx[e] == s``."""
    return sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64).ravel()
    if len(idx) and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for {a.shape[0]} rows")

    def back(g):
        return (np.asarray(_scatter_matrix(idx, a.shape[0]) @ g),)

    return _node(a.value[idx], (a,), back)


def segment_sum(a: Tensor, segments, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets; empty buckets are 0."""
    segments = np.asarray(segments, dtype=np.int64).ravel()
    if len(segments) != a.shape[0]:
        raise DimensionError(f"segment_sum: {len(segments)} ids for {a.shape[0]} rows")
    out = np.asarray(_scatter_matrix(segments, num_segments) @ a.value)
    return _node(out, (a,), lambda g: (g[segments],))


def segment_softmax(scores: Tensor, segments, num_segments: int) -> Tensor:
    """Softmax of a column of scores within each segment, max-shifted per segment."""
    segments = np.asarray(segments, dtype=np.int64).ravel()
    if scores.shape != (len(segments), 1):
        raise DimensionError(f"segment_softmax: scores {scores.shape} vs {len(segments)} ids")
    s = scores.value[:, 0]
    peak = np.full(num_segments, -np.inf)
    np.maximum.at(peak, segments, s)
    e = np.exp(s - peak[segments])
    denom = np.bincount(segments, weights=e, minlength=num_segments)
    y = (e / denom[segments]).reshape(-1, 1)

    def back(g):
        gy = np.bincount(segments, weights=(g * y)[:, 0], minlength=num_segments)
        return (y * (g - gy[segments].reshape(-1, 1)),)

    return _node(y, (scores,), back)


def l1_row_distance(x1: Tensor, x2: Tensor) -> Tensor:
    """Pairwise Manhattan distances: ``out[i, j] = sum_d |x1[i, d] - x2[j, d]|``."""
    if x1.shape[1] != x2.shape[1]:
        raise DimensionError(f"l1_row_distance: widths differ {x1.shape} vs {x2.shape}")
    diff = x1.value[:, None, :] - x2.value[None, :, :]
    sign = np.sign(diff)

    def back(g):
        w = g[:, :, None] * sign
        return (w.sum(axis=1), -w.sum(axis=0))

    return _node(np.abs(diff).sum(axis=2), (x1, x2), back)


def paired_l1(x1: Tensor, idx1, x2: Tensor, idx2) -> Tensor:
    """Column of distances ``||x1[idx1[n]] - x2[idx2[n]]||_1``."""
    if x1.shape[1] != x2.shape[1]:
        raise DimensionError(f"paired_l1: widths differ {x1.shape} vs {x2.shape}")
    return row_sum(abs_(sub(gather_rows(x1, idx1), gather_rows(x2, idx2))))


@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_index: Optional[Tuple[int, int]]
    analytic: np.ndarray
    numeric: np.ndarray


def finite_difference_check(
    computation: Callable[[], Tensor],
    parameter: Parameter,
    step: float = 1e-5,
    tolerance: float = 1e-4,
    abs_floor: float = 1e-8,
) -> GradCheckReport:
    """Compare backprop gradients of ``parameter`` with central differences.

    Entry error is ``|a - n| / max(|a|, |n|)``, taken as 0 when
    ``|a - n| <= abs_floor``. ``computation``
    is re-evaluated with ``parameter.value`` perturbed in place, so it must
    read the parameter on every call.
    """
    first = computation()
    if first.shape != (1, 1):
        raise ContractError(f"gradient check needs a scalar computation, got {first.shape}")
    if computation().value[0, 0] != first.value[0, 0]:
        raise CheckInvalidError("computation is not deterministic")
    first.backward()
    analytic = parameter.grad.copy()
    numeric = np.zeros_like(parameter.value)
    v = parameter.value
    for idx in np.ndindex(*v.shape):
        orig = v[idx]
        v[idx] = orig + step
        up = computation().value[0, 0]
        v[idx] = orig - step
        down = computation().value[0, 0]
        v[idx] = orig
        numeric[idx] = (up - down) / (2 * step)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= abs_floor, 0.0, diff / np.where(scale > 0, scale, 1.0))
    worst = np.unravel_index(np.argmax(rel), rel.shape) if rel.size else None
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel < tolerance, max_rel, worst, analytic, numeric)
