"""Dense tensors with reverse-mode autodiff, and a CSR sparse matrix.

Every differentiable op builds a new :class:`Tensor` holding references to
its parents and a closure that pushes the output gradient back to them.
The graph is rebuilt on every forward pass (define-by-run); :func:`backward`
walks it once in reverse topological order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float64


class DimensionError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents: tuple[Tensor, ...] = tuple(parents) if self.requires_grad else ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = (
            backward if self.requires_grad else None
        )
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        tag = f" {self.name}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str = "") -> Tensor:
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, name=name)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}") from exc


# ----------------------------------------------------------------------------
# elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(a.data + b.data, parents=(a, b), backward=bw)


def mul(a, b) -> Tensor:
    """Elementwise (Hadamard) product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(a.data * b.data, parents=(a, b), backward=bw)


def scale(a: Tensor, c: float) -> Tensor:
    return Tensor(a.data * c, parents=(a,), backward=lambda g: (g * c,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor(out, parents=(a,), backward=lambda g: (g * out * (1.0 - out),))


def sign(a) -> Tensor:
    """Elementwise sign, sign(0) = 0. Not differentiable; returns a constant."""
    return Tensor(np.sign(as_tensor(a).data))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, parents=(a,), backward=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), parents=(a,), backward=lambda g: (g / a.data,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    # tanh approximation; smooth everywhere so finite differences stay valid
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor(out, parents=(a,), backward=bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != tensors[0].data.ndim or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, tensors[0].shape)) if i != ax
        ):
            raise DimensionError(f"concat shapes {[t.shape for t in tensors]} differ off axis {axis}")
    sizes = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))

    return Tensor(np.concatenate([t.data for t in tensors], axis=ax), parents=tensors, backward=bw)


def l2_normalize(a: Tensor, eps: float = 0.0) -> Tensor:
    """Normalize along the last axis. All-zero rows map to zero rows."""
    x = a.data
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    safe = np.where(norm > eps, norm, 1.0)
    zero = norm <= eps
    out = np.where(zero, 0.0, x / safe)

    def bw(g):
        proj = (g * out).sum(axis=-1, keepdims=True)
        return (np.where(zero, 0.0, (g - out * proj) / safe),)

    return Tensor(out, parents=(a,), backward=bw)


# ----------------------------------------------------------------------------
# reductions and shape ops

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,), backward=bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor(a.data.reshape(shape), parents=(a,), backward=lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor(a.data.transpose(axes), parents=(a,), backward=lambda g: (g.transpose(inv),))


def index(a: Tensor, idx) -> Tensor:
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, idx, g)
        return (out,)

    return Tensor(a.data[idx], parents=(a,), backward=bw)


def take_rows(a: Tensor, rows) -> Tensor:
    """Gather rows of a 2-D tensor; ``rows`` may have any shape."""
    rows = np.asarray(rows, dtype=np.int64)
    if a.data.ndim != 2:
        raise DimensionError("take_rows expects a 2-D tensor")
    if rows.size and (rows.min() < 0 or rows.max() >= a.shape[0]):
        raise IndexError(f"row index out of range [0, {a.shape[0]})")
    n, d = a.shape
    flat = rows.reshape(-1)

    def bw(g):
        out = np.zeros((n, d), dtype=DTYPE)
        np.add.at(out, flat, g.reshape(-1, d))
        return (out,)

    return Tensor(a.data[rows], parents=(a,), backward=bw)


def detach(a: Tensor) -> Tensor:
    return Tensor(a.data)


# ----------------------------------------------------------------------------
# linear algebra

def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast as in ``np.matmul``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch {a.shape} @ {b.shape}")

    def bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.data.ndim == 2 and a.data.ndim > 2:
            # shared weight: fold the batch dims into one product
            k, n = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
        else:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return _unbroadcast(ga, a.shape), gb

    return Tensor(a.data @ b.data, parents=(a, b), backward=bw)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis, stabilized by max subtraction.

    ``mask`` is a boolean array broadcastable to ``a``; False entries get
    probability exactly zero. Every row must keep at least one True entry.
    """
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor(out, parents=(a,), backward=bw)


rowwise_softmax = softmax


def log_softmax(a: Tensor) -> Tensor:
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))
    out = x - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor(out, parents=(a,), backward=bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-8) -> Tensor:
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    def bw(g):
        gx = g * gamma.data
        gin = inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return gin, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)

    return Tensor(out, parents=(a, gamma, beta), backward=bw)


# ----------------------------------------------------------------------------
# sparse

@dataclass
class SparseRowMatrix:
    """Compressed sparse row matrix with nonnegative weights."""

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    weights: np.ndarray
    _csr: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.row_offsets = np.asarray(self.row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(self.col_indices, dtype=np.int64)
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        if len(self.row_offsets) != self.n_rows + 1 or self.row_offsets[0] != 0:
            raise ValueError("row_offsets must have n_rows + 1 entries starting at 0")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if self.row_offsets[-1] != len(self.col_indices) or len(self.col_indices) != len(self.weights):
            raise ValueError("row_offsets[-1] must equal nnz")
        if self.nnz and (self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols):
            raise ValueError(f"column index outside [0, {self.n_cols})")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")

    @property
    def nnz(self) -> int:
        return len(self.col_indices)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    @classmethod
    def from_scipy(cls, m) -> "SparseRowMatrix":
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def identity(cls, n: int) -> "SparseRowMatrix":
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n))

    def to_scipy(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.weights, self.col_indices, self.row_offsets), shape=(self.n_rows, self.n_cols)
            )
        return self._csr

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=DTYPE)
        for i in range(self.n_rows):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            out[i, self.col_indices[lo:hi]] += self.weights[lo:hi]
        return out

    def row_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))

    def row_sums(self) -> np.ndarray:
        return np.bincount(self.row_ids(), weights=self.weights, minlength=self.n_rows)

    def row_normalized(self) -> "SparseRowMatrix":
        sums = self.row_sums()
        per_entry = np.repeat(np.where(sums > 0, sums, 1.0), np.diff(self.row_offsets))
        return SparseRowMatrix(
            self.n_rows, self.n_cols, self.row_offsets.copy(), self.col_indices.copy(), self.weights / per_entry
        )


def spmm(a: SparseRowMatrix, x) -> Tensor:
    """``a @ x`` with ``a`` constant; differentiable with respect to ``x``."""
    x = as_tensor(x)
    if x.data.ndim != 2 or a.n_cols != x.shape[0]:
        raise DimensionError(f"spmm shape mismatch {a.shape} @ {x.shape}")
    m = a.to_scipy()
    return Tensor(np.asarray(m @ x.data), parents=(x,), backward=lambda g: (np.asarray(m.T @ g),))


# ----------------------------------------------------------------------------
# backward pass

def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Sequence[Tensor] | None = None) -> list[np.ndarray] | None:
    """Reverse-mode sweep from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every leaf that requires grad.
    When ``wrt`` is given, the gradients of those tensors are returned and a
    :class:`TapeError` is raised for any tensor the loss does not depend on.
    """
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TapeError("loss does not depend on any tensor that requires grad")
    order = _toposort(loss)
    on_tape = {id(n) for n in order}
    if wrt is not None:
        for t in wrt:
            if id(t) not in on_tape:
                raise TapeError(f"{t!r} is not on the tape of this loss")
    want = {id(t) for t in wrt} if wrt is not None else set()
    captured: dict[int, np.ndarray] = {}
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if id(node) in want:
            captured[id(node)] = g
        if node.is_leaf:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
    if wrt is None:
        return None
    return [captured.get(id(t), np.zeros_like(t.data)) for t in wrt]


def zero_grad(params) -> None:
    for p in params:
        p.grad = None
