"""Reverse-mode automatic differentiation on dense float64 arrays.

A :class:`Tensor` wraps a numpy array plus an optional backward closure.
Operations build a DAG; ``Tensor.backward()`` walks it in reverse
topological order and accumulates vector-Jacobian products.  Gradients are
kept only on leaf tensors (``requires_grad=True`` and no parents), which
is all the optimizer ever needs; intermediate adjoints live in a scratch
dict for the duration of the walk.

Everything is float64.  Models here are small, and 64-bit precision is
what makes the finite-difference gradient checks meaningful.

Large matmuls are split row/batch-wise across a private thread pool with
BLAS pinned to a single thread (see ``_compute``); the partition is fixed,
so results do not depend on scheduling.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import _compute
from ._kernels import softmax_rows, softmax_rows_vjp
from .errors import NumericError, ShapeError

_grad_enabled = True
_strict_finite = False

# below this element count a pooled matmul is not worth the dispatch cost
_POOL_MIN_WORK = 1 << 20


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_strict_finite(on: bool) -> None:
    """When on, every op output is scanned for NaN/Inf and raises NumericError."""
    global _strict_finite
    _strict_finite = bool(on)


@contextlib.contextmanager
def strict_finite():
    prev = _strict_finite
    set_strict_finite(True)
    try:
        yield
    finally:
        set_strict_finite(prev)


def _check_finite(data: np.ndarray, op: str) -> None:
    if _strict_finite and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by {op}")


class Tensor:
    """Dense float64 array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: tuple["Tensor", ...], vjp, op: str) -> "Tensor":
        _check_finite(data, op)
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._vjp = vjp
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- backward pass -------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient requires a scalar")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} != tensor shape {self.data.shape}")

        order = self._toposort()
        adjoint: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = adjoint.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:  # leaf
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in adjoint:
                    adjoint[key] = adjoint[key] + pg
                else:
                    adjoint[key] = pg

    def _toposort(self) -> list["Tensor"]:
        # iterative DFS: LSTM graphs chain thousands of nodes deep
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and (p.requires_grad or p._parents):
                    stack.append((p, False))
        order.reverse()
        return order

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# -- broadcasting helper --------------------------------------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# -- elementwise binary ops ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor._node(out, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return Tensor._node(out, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return Tensor._node(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        )

    return Tensor._node(out, (a, b), vjp, "div")


# -- elementwise unary ops -------------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return Tensor._node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    out = np.log(a.data)
    return Tensor._node(out, (a,), lambda g: (g / a.data,), "log")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor._node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # stable in both tails
    out = np.empty_like(a.data)
    pos = a.data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.data[pos]))
    ez = np.exp(a.data[~pos])
    out[~pos] = ez / (1.0 + ez)
    return Tensor._node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return Tensor._node(out, (a,), lambda g: (g * (a.data > 0.0),), "relu")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return Tensor._node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data**exponent
    return Tensor._node(
        out, (a,), lambda g: (g * exponent * a.data ** (exponent - 1.0),), "power"
    )


# -- matmul -----------------------------------------------------------------


def _pooled_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.matmul with single-thread BLAS blocks spread over worker threads."""
    pool = _compute.matmul_pool()
    work = a.size * (b.shape[-1] if b.ndim > 1 else 1)
    if pool is None or work < _POOL_MIN_WORK or a.ndim < 2 or b.ndim < 2:
        return a @ b
    workers = _compute.matmul_workers()
    if a.ndim == 2 and b.ndim == 2:
        m = a.shape[0]
        if m < 2 * workers:
            return a @ b
        out = np.empty((m, b.shape[1]), dtype=np.float64)
        bounds = [(m * w // workers, m * (w + 1) // workers) for w in range(workers)]
        futures = [
            pool.submit(np.dot, a[lo:hi], b, out=out[lo:hi]) for lo, hi in bounds[1:]
        ]
        lo, hi = bounds[0]
        np.dot(a[lo:hi], b, out=out[lo:hi])
        for f in futures:
            f.result()
        return out
    if a.ndim == b.ndim and a.ndim >= 3 and a.shape[:-2] == b.shape[:-2]:
        lead = a.shape[:-2]
        a3 = a.reshape(-1, *a.shape[-2:])
        b3 = b.reshape(-1, *b.shape[-2:])
        n = a3.shape[0]
        if n < workers:
            return a @ b
        out = np.empty((n, a3.shape[1], b3.shape[2]), dtype=np.float64)

        def block(lo, hi):
            for i in range(lo, hi):
                np.dot(a3[i], b3[i], out=out[i])

        bounds = [(n * w // workers, n * (w + 1) // workers) for w in range(workers)]
        futures = [pool.submit(block, lo, hi) for lo, hi in bounds[1:]]
        block(*bounds[0])
        for f in futures:
            f.result()
        return out.reshape(*lead, a3.shape[1], b3.shape[2])
    return a @ b


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 1 or b.data.ndim < 2:
        raise ShapeError("matmul requires at least 1-d @ 2-d operands")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dims disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = _pooled_matmul(a.data, b.data)

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = _pooled_matmul(g, np.swapaxes(b.data, -1, -2))
            ga = _unbroadcast(ga, a.data.shape)
        if b.requires_grad:
            at = a.data[:, None] if a.data.ndim == 1 else np.swapaxes(a.data, -1, -2)
            gg = g[None, :] if a.data.ndim == 1 else g
            gb = _unbroadcast(_pooled_matmul(at, gg), b.data.shape)
        return ga, gb

    return Tensor._node(out, (a, b), vjp, "matmul")


# -- shape ops ----------------------------------------------------------------


def reshape(a, *shape) -> Tensor:
    a = as_tensor(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    out = a.data.reshape(shape)
    return Tensor._node(out, (a,), lambda g: (g.reshape(a.data.shape),), "reshape")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    out = np.swapaxes(a.data, ax1, ax2)
    return Tensor._node(out, (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return Tensor._node(
        out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inverse)),), "transpose"
    )


def take(a, key) -> Tensor:
    """Basic (slice/int) indexing with scatter-style backward."""
    a = as_tensor(a)
    out = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return (full,)

    return Tensor._node(np.ascontiguousarray(out), (a,), vjp, "take")


def concatenate(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return Tensor._node(out, tuple(ts), vjp, "concatenate")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        moved = np.moveaxis(g, axis, 0)
        return tuple(np.ascontiguousarray(moved[i]) for i in range(len(ts)))

    return Tensor._node(out, tuple(ts), vjp, "stack")


# -- reductions ----------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return Tensor._node(out, (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in np.atleast_1d(axis)]
    )

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.data.shape).copy(),)

    return Tensor._node(out, (a,), vjp, "mean")


# -- fused ops ----------------------------------------------------------------


def softmax(a, scale: float = 1.0) -> Tensor:
    """Row softmax of ``a * scale`` along the last axis (numerically stable)."""
    a = as_tensor(a)
    probs = softmax_rows(a.data, scale)

    def vjp(g):
        return (softmax_rows_vjp(probs, g, scale),)

    return Tensor._node(probs, (a,), vjp, "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    xhat = centered / sigma
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = ggain = gbias = None
        ghat = g * gain.data
        if x.requires_grad:
            m1 = ghat.mean(axis=-1, keepdims=True)
            m2 = (ghat * xhat).mean(axis=-1, keepdims=True)
            gx = (ghat - m1 - xhat * m2) / sigma
        lead = tuple(range(g.ndim - 1))
        if gain.requires_grad:
            ggain = (g * xhat).sum(axis=lead)
        if bias.requires_grad:
            gbias = g.sum(axis=lead)
        return gx, ggain, gbias

    return Tensor._node(out, (x, gain, bias), vjp, "layer_norm")
