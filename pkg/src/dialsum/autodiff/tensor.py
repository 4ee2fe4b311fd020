"""Reverse-mode automatic differentiation over dense float64 arrays.

Each :class:`Tensor` produced by an op records its parents and a closure
mapping the output gradient to parent gradients. :meth:`Tensor.backward`
walks the graph once in reverse topological order. Only leaves created with
``requires_grad=True`` keep a ``.grad`` buffer, and that buffer accumulates
across calls until the caller zeroes it.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class ContractError(ValueError):
    """An op was called outside its documented preconditions."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _as_array(data) -> np.ndarray:
    return np.asarray(data, dtype=np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents: tuple = (), _backward: Callable | None = None):
        self.data = _as_array(data)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = _parents
        self._backward = _backward

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    def zero_grad(self) -> None:
        self.grad = None

    # -- backward ------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``.grad``.

        ``self`` must be a scalar unless an explicit seed gradient is given.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): _as_array(grad)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar ------------------------------------------------
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
        return index(self, key)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, _parents=tuple(parents), _backward=backward)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# elementwise
# ----------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return _make(out, (a, b), backward, "div")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sqrt(x: Tensor) -> Tensor:
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def clamp(x: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip values; the gradient is passed only where no bound was active."""
    lo_v = -np.inf if lo is None else lo
    hi_v = np.inf if hi is None else hi
    out = np.clip(x.data, lo_v, hi_v)
    mask = (x.data >= lo_v) & (x.data <= hi_v)
    return _make(out, (x,), lambda g: (g * mask,), "clamp")


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training or when ``rate == 0``."""
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a random generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ----------------------------------------------------------------------
# reductions and shape ops
# ----------------------------------------------------------------------

def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward, "sum")


def reshape(x: Tensor, shape) -> Tensor:
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T, (x,), lambda g: (g.T,), "transpose")


def index(x: Tensor, key) -> Tensor:
    """Basic or integer-array indexing; duplicate indices accumulate in backward."""
    out = x.data[key]

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, key, g)
        return (gx,)

    return _make(np.array(out, dtype=np.float64), (x,), backward, "index")


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    out = np.concatenate([p.data for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, parts, backward, "concat")


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., k) and ``b`` of shape (k,) or (k, n)."""
    a, b = _wrap(a), _wrap(b)
    if a.shape[-1] != b.shape[0] or b.ndim > 2:
        raise ContractError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        a2 = a.data.reshape(-1, a.shape[-1])
        if b.ndim == 1:
            g2 = g.reshape(-1, 1)
            gb = (a2.T @ g2).ravel()
            ga = (g2 @ b.data.reshape(1, -1)).reshape(a.shape)
        else:
            g2 = g.reshape(-1, b.shape[1])
            gb = a2.T @ g2
            ga = (g2 @ b.data.T).reshape(a.shape)
        return ga, gb

    return _make(out, (a, b), backward, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise ContractError(f"linear: input width {x.shape[-1]} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[0])
        x2 = x.data.reshape(-1, weight.shape[1])
        gx = (g2 @ weight.data).reshape(x.shape)
        gw = g2.T @ x2
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out, parents, lambda g: backward(g)[: len(parents)], "linear")


# ----------------------------------------------------------------------
# composite ops with dedicated backward
# ----------------------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    if x.data.size == 0 or x.shape[axis] == 0:
        raise ContractError("softmax of an empty vector")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine of two vectors; defined as 0 (with zero gradient) if either is zero."""
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    if na == 0.0 or nb == 0.0:
        return _make(np.array(0.0), (a, b), lambda g: (np.zeros_like(a.data), np.zeros_like(b.data)),
                     "cosine")
    dot = float(a.data @ b.data)
    cos = dot / (na * nb)

    def backward(g):
        ga = g * (b.data / (na * nb) - cos * a.data / (na * na))
        gb = g * (a.data / (na * nb) - cos * b.data / (nb * nb))
        return ga, gb

    return _make(np.array(cos), (a, b), backward, "cosine")


def gru_cell(x: Tensor, h_prev: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor) -> Tensor:
    """One GRU update built from elementary ops.

    Gate rows of the ``3H`` weights are ordered ``[z, r, n]`` and the reset
    gate acts inside the candidate: ``n = tanh(W_n x + b_in + r * (U_n h + b_hn))``.
    ``x`` and ``h_prev`` may carry a leading batch axis.
    """
    hidden = h_prev.shape[-1]
    if w_x.shape != (3 * hidden, x.shape[-1]) or w_h.shape != (3 * hidden, hidden):
        raise ContractError(
            f"gru_cell: x {x.shape}, h {h_prev.shape} do not fit w_x {w_x.shape}, w_h {w_h.shape}")
    if b_x.shape != (3 * hidden,) or b_h.shape != (3 * hidden,):
        raise ContractError("gru_cell: bias shapes must be (3H,)")
    gx = linear(x, w_x, b_x)
    gh = linear(h_prev, w_h, b_h)
    z = sigmoid(gx[..., :hidden] + gh[..., :hidden])
    r = sigmoid(gx[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden])
    n = tanh(gx[..., 2 * hidden:] + r * gh[..., 2 * hidden:])
    return (1.0 - z) * n + z * h_prev


def gru_sequence(gx: Tensor, w_h: Tensor, b_h: Tensor, h0: Tensor) -> Tensor:
    """Fused GRU recurrence over pre-projected inputs ``gx`` of shape ``(T, 3H)``.

    Returns the stacked states ``h_1..h_T`` with shape ``(T, H)``. Runs on the
    compiled kernel when available.
    """
    hidden = h0.shape[0]
    if gx.ndim != 2 or gx.shape[1] != 3 * hidden or w_h.shape != (3 * hidden, hidden):
        raise ContractError(f"gru_sequence: gx {gx.shape}, w_h {w_h.shape}, h0 {h0.shape}")
    if gx.shape[0] == 0:
        raise ContractError("gru_sequence over an empty sequence")
    gx_c = np.ascontiguousarray(gx.data)
    wh_c = np.ascontiguousarray(w_h.data)
    hs, z, r, n, ghn = kernels.gru_forward(gx_c, wh_c, np.ascontiguousarray(b_h.data),
                                           np.ascontiguousarray(h0.data))

    def backward(g):
        dgx, dwh, dbh, dh0 = kernels.gru_backward(np.ascontiguousarray(g), wh_c, hs, z, r, n, ghn)
        return dgx, dwh, dbh, dh0

    return _make(hs[1:].copy(), (gx, w_h, b_h, h0), backward, "gru_sequence")


def flip_rows(x: Tensor) -> Tensor:
    return _make(x.data[::-1].copy(), (x,), lambda g: (g[::-1].copy(),), "flip")
