"""Dense tensors with reverse-mode automatic differentiation on a numpy backend.

Every forward op returns a new :class:`Tensor`. When any input requires a
gradient the output keeps a reference to its inputs and a closure that pushes
the output gradient back to them. :func:`backward` walks that record in
reverse topological order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

LOG_FLOOR = 1e-12
DEFAULT_DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class GraphError(RuntimeError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_finite(op: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        bad = np.argwhere(~np.isfinite(arr))
        raise NonFiniteError(f"{op}: non-finite output at index {tuple(bad[0])}")


class Tensor:
    """A node in the reverse-mode graph.

    ``data`` holds the values, ``grad`` is filled by :func:`backward` for
    tensors that require a gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = "", dtype=None):
        if dtype is None:
            floating = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if floating else DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._op = "leaf"
        self._consumed = False

    # -- bookkeeping -------------------------------------------------------
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
    def is_leaf(self) -> bool:
        return self._op == "leaf"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True).reshape(self.shape)
        else:
            self.grad = self.grad + g

    # -- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad: bool = False, name: str = "") -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    _check_finite(op, data)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._consumed = False
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
        out._op = "leaf"
    return out


def _broadcast_ok(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary -------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_ok(a.data, b.data, "add")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_ok(a.data, b.data, "sub")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _make("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_ok(a.data, b.data, "mul")

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make("mul", a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _broadcast_ok(a.data, b.data, "div")
    with np.errstate(divide="ignore", invalid="ignore"):
        out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _make("div", out, (a, b), bw)


def scale(a, s: float) -> Tensor:
    a = _wrap(a)
    s = float(s)
    return _make("scale", a.data * s, (a,), lambda g: a._accum(g * s))


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    return _make("matmul", a.data @ b.data, (a, b), bw)


def affine(x, w, b) -> Tensor:
    """``x @ w + b`` for ``x`` (batch, in), ``w`` (in, out), ``b`` (out,)."""
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"affine: incompatible shapes x{x.shape} w{w.shape} b{b.shape}")

    def bw(g):
        if x.requires_grad:
            x._accum(g @ w.data.T)
        if w.requires_grad:
            w._accum(x.data.T @ g)
        if b.requires_grad:
            b._accum(g.sum(axis=0))

    return _make("affine", x.data @ w.data + b.data, (x, w, b), bw)


# -- elementwise unary ---------------------------------------------------------
def relu(a) -> Tensor:
    a = _wrap(a)
    mask = a.data > 0
    return _make("relu", np.where(mask, a.data, 0.0), (a,), lambda g: a._accum(g * mask))


def tanh(a) -> Tensor:
    a = _wrap(a)
    out = np.tanh(a.data)
    return _make("tanh", out, (a,), lambda g: a._accum(g * (1.0 - out * out)))


def sigmoid(a) -> Tensor:
    a = _wrap(a)
    # split by sign so exp never overflows
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _make("sigmoid", out, (a,), lambda g: a._accum(g * out * (1.0 - out)))


def exp(a) -> Tensor:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _make("exp", out, (a,), lambda g: a._accum(g * out))


def log(a) -> Tensor:
    """Natural log with the argument floored at ``LOG_FLOOR``.

    The floor is not differentiated through: the local gradient is
    ``1 / max(x, LOG_FLOOR)`` everywhere.
    """
    a = _wrap(a)
    if np.any(a.data < 0):
        raise ValueError("log: negative argument")
    clamped = np.maximum(a.data, LOG_FLOOR)
    return _make("log", np.log(clamped), (a,), lambda g: a._accum(g / clamped))


def absolute(a) -> Tensor:
    a = _wrap(a)
    sign = np.sign(a.data)
    return _make("abs", np.abs(a.data), (a,), lambda g: a._accum(g * sign))


def square(a) -> Tensor:
    a = _wrap(a)
    return _make("square", a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))


# -- softmax family ------------------------------------------------------------
def softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make("softmax", out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _wrap(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(g):
        a._accum(g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _make("log_softmax", out, (a,), bw)


# -- reductions and structure ---------------------------------------------------
def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g, a.shape))

    return _make("sum", np.asarray(out), (a,), bw)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _wrap(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if count == 0:
        raise ShapeError(f"mean over empty axis of shape {a.shape}")
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accum(np.broadcast_to(g / count, a.shape))

    return _make("mean", np.asarray(out), (a,), bw)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [_wrap(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in ts]} on axis {axis}") from None
    bounds = np.cumsum([0] + [t.shape[axis] for t in ts])

    def bw(g):
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _make("concat", out, ts, bw)


def take(a, idx) -> Tensor:
    """Basic or advanced indexing; the gradient scatters back with ``np.add.at``."""
    a = _wrap(a)
    if isinstance(idx, Tensor):
        idx = idx.data.astype(np.int64)
    try:
        out = np.array(a.data[idx], copy=True)
    except IndexError as exc:
        raise ShapeError(f"slice {idx!r} invalid for shape {a.shape}: {exc}") from None

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accum(full)

    return _make("slice", out, (a,), bw)


def reshape(a, shape) -> Tensor:
    a = _wrap(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make("reshape", out, (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = _wrap(a)
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make("transpose", out, (a,), lambda g: a._accum(np.transpose(g, inv)))


def custom_op(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record an op defined outside this module (e.g. bilinear sampling).

    ``backward_fn(g)`` must call ``parent._accum`` on the parents that
    require a gradient.
    """
    return _make(op, np.asarray(data), [_wrap(p) for p in parents], backward_fn)


# -- graph and backward ----------------------------------------------------------
@dataclass
class Graph:
    """Operations reachable from a root, inputs before outputs."""

    ops: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_root(cls, root: Tensor) -> Graph:
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
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls([t for t in order if not t.is_leaf])

    def leaves(self) -> list[Tensor]:
        out, seen = [], set()
        for node in self.ops:
            for p in node._parents:
                if p.is_leaf and p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out


def backward(loss: Tensor) -> Graph:
    """Populate ``.grad`` on every leaf that requires a gradient.

    Leaf gradients accumulate; call ``zero_grad`` between steps. Running
    backward twice on the same loss raises :class:`GraphError`.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or loss.is_leaf:
        raise GraphError("loss is detached from the graph (no input requires grad)")
    if loss._consumed:
        raise GraphError("backward already ran on this loss")
    graph = Graph.from_root(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.ops):
        if node.grad is not None:
            node._backward(node.grad)
    for node in graph.ops:
        node.grad = None
    loss._consumed = True
    return graph


def grad(loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``params`` without touching other leaves' state."""
    for p in params:
        p.zero_grad()
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]


# -- numerical gradient check ---------------------------------------------------
@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_index: tuple
    autodiff: np.ndarray
    numeric: np.ndarray


def grad_check(fn: Callable[[Tensor], Tensor], point, eps: float = 1e-6) -> GradCheckResult:
    """Compare autodiff against central finite differences at ``point``.

    Relative error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point, dtype=np.float64)
    x = Tensor(x0.copy(), requires_grad=True)
    out = fn(x)
    if out.size != 1:
        raise ShapeError(f"grad_check needs a scalar function, got shape {out.shape}")
    backward(out)
    ad = x.grad if x.grad is not None else np.zeros_like(x0)
    num = np.zeros_like(x0)
    flat = x0.reshape(-1)
    for i in range(flat.size):
        idx = np.unravel_index(i, x0.shape)
        vals = []
        for sgn in (1.0, -1.0):
            xp = flat.copy()
            xp[i] += sgn * eps
            try:
                v = fn(Tensor(xp.reshape(x0.shape))).item()
            except NonFiniteError as exc:
                raise NonFiniteError(f"grad_check: non-finite value perturbing coordinate {idx}: {exc}") from None
            if not math.isfinite(v):
                raise NonFiniteError(f"grad_check: non-finite value perturbing coordinate {idx}")
            vals.append(v)
        num[idx] = (vals[0] - vals[1]) / (2 * eps)
    rel = np.abs(ad - num) / np.maximum(1.0, np.maximum(np.abs(ad), np.abs(num)))
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckResult(float(rel.max()) if rel.size else 0.0, tuple(int(i) for i in worst), ad, num)


# -- optimisation ------------------------------------------------------------------
@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    states: Sequence[AdamState] | None,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], list[AdamState]]:
    """One bias-corrected Adam update. Returns new arrays; inputs are not modified."""
    if learning_rate <= 0:
        raise ValueError(f"learning_rate must be positive, got {learning_rate}")
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if states is None:
        states = [AdamState(np.zeros_like(p), np.zeros_like(p)) for p in params]
    new_params, new_states = [], []
    for p, g, s in zip(params, grads, states):
        if p.shape != g.shape or s.m.shape != p.shape:
            raise ShapeError(f"adam_step: param {p.shape}, grad {g.shape}, state {s.m.shape}")
        t = s.t + 1
        m = beta1 * s.m + (1 - beta1) * g
        v = beta2 * s.v + (1 - beta2) * g * g
        mhat = m / (1 - beta1**t)
        vhat = v / (1 - beta2**t)
        new_params.append(p - learning_rate * mhat / (np.sqrt(vhat) + eps))
        new_states.append(AdamState(m, v, t))
    return new_params, new_states


class Adam:
    """Stateful wrapper around :func:`adam_step` for a fixed list of leaf tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning_rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.betas = (beta1, beta2)
        self.eps = eps
        self.states = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite gradient; step aborted")
        new, self.states = adam_step([p.data for p in self.params], grads, self.states, self.lr, *self.betas, self.eps)
        for p, d in zip(self.params, new):
            p.data = d


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape or (fan_in, fan_out))
