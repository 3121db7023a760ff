"""Reverse-mode automatic differentiation over dense 2-D float64 arrays.

Every tensor is a ``(rows, cols)`` matrix. Binary elementwise ops broadcast a
``(1, 1)``, ``(1, d)`` or ``(n, 1)`` operand against an ``(n, d)`` one; nothing
else is broadcast. Graphs are recorded only while gradients are enabled and
some input requires a gradient; :func:`no_grad` switches recording off.
"""

from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class ShapeMismatch(ValueError):
    pass


class NotScalarLoss(ValueError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> Tensor:
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn: BackwardFn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.requires_grad = False
    out.parents = ()
    out.backward_fn = None
    if getattr(_state, "enabled", True):
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out.parents = parents
                out.backward_fn = backward_fn
                break
    return out


def _broadcast_shape(x: Tensor, y: Tensor, op: str) -> tuple[int, int]:
    (r1, c1), (r2, c2) = x.shape, y.shape
    if (r1 == r2 or r1 == 1 or r2 == 1) and (c1 == c2 or c1 == 1 or c2 == 1):
        return max(r1, r2), max(c1, c2)
    raise ShapeMismatch(f"{op}: incompatible shapes {x.shape} and {y.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


# -- elementwise binary ------------------------------------------------------

def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x, y, "add")
    sx, sy = x.shape, y.shape
    return _make(x.data + y.data, (x, y), lambda g: (_unbroadcast(g, sx), _unbroadcast(g, sy)))


def sub(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x, y, "sub")
    sx, sy = x.shape, y.shape
    return _make(x.data - y.data, (x, y), lambda g: (_unbroadcast(g, sx), -_unbroadcast(g, sy)))


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x, y, "mul")
    xd, yd = x.data, y.data

    def backward(g):
        return _unbroadcast(g * yd, xd.shape), _unbroadcast(g * xd, yd.shape)

    return _make(xd * yd, (x, y), backward)


def div(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    _broadcast_shape(x, y, "div")
    xd, yd = x.data, y.data
    out = xd / yd

    def backward(g):
        return _unbroadcast(g / yd, xd.shape), _unbroadcast(-g * out / yd, yd.shape)

    return _make(out, (x, y), backward)


def minimum(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise minimum; on ties the gradient goes to ``x``."""
    if x.shape != y.shape:
        raise ShapeMismatch(f"minimum: shapes {x.shape} and {y.shape} differ")
    pick_x = x.data <= y.data
    return _make(np.where(pick_x, x.data, y.data), (x, y), lambda g: (g * pick_x, g * ~pick_x))


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


# -- linear algebra ----------------------------------------------------------

def matmul(x: Tensor, w: Tensor) -> Tensor:
    if x.shape[1] != w.shape[0]:
        raise ShapeMismatch(f"matmul: shapes {x.shape} and {w.shape} are not aligned")
    xd, wd = x.data, w.data
    return _make(xd @ wd, (x, w), lambda g: (g @ wd.T, xd.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` with ``b`` a row vector; fused for speed."""
    if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
        raise ShapeMismatch(f"linear: shapes {x.shape}, {w.shape}, {b.shape} are incompatible")
    xd, wd = x.data, w.data
    return _make(
        xd @ wd + b.data,
        (x, w, b),
        lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0, keepdims=True)),
    )


def mlp(x: Tensor, layers: Sequence[tuple[Tensor, Tensor]]) -> Tensor:
    """Fused ReLU perceptron: linear layers with ReLU between, none after the last."""
    tensors: list[Tensor] = [x]
    acts = [x.data]
    last = len(layers) - 1
    h = x.data
    for i, (w, b) in enumerate(layers):
        if h.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
            raise ShapeMismatch(f"mlp layer {i}: shapes {h.shape}, {w.shape}, {b.shape}")
        h = h @ w.data + b.data
        if i < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
        tensors += (w, b)

    def backward(g):
        grads: list[np.ndarray | None] = [None] * len(tensors)
        for i in range(last, -1, -1):
            if i < last:
                g = g * (acts[i + 1] > 0)
            w = tensors[1 + 2 * i]
            grads[1 + 2 * i] = acts[i].T @ g
            grads[2 + 2 * i] = g.sum(axis=0, keepdims=True)
            if i > 0 or x.requires_grad:
                g = g @ w.data.T
        grads[0] = g if x.requires_grad else None
        return grads

    return _make(h, tuple(tensors), backward)


def transpose(x: Tensor) -> Tensor:
    return _make(x.data.T, (x,), lambda g: (g.T,))


# -- elementwise unary -------------------------------------------------------

def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _make(xd * xd, (x,), lambda g: (2.0 * g * xd,))


def softplus(x: Tensor) -> Tensor:
    xd = x.data
    out = np.logaddexp(0.0, xd)
    return _make(out, (x,), lambda g: (g / (1.0 + np.exp(-xd)),))


# -- reductions --------------------------------------------------------------

def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _make(np.array([[x.data.sum()]]), (x,), lambda g: (np.broadcast_to(g, shape),))
    out = x.data.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (np.broadcast_to(g, shape),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return sum(x, axis) * (1.0 / n)


def l2_norm(x: Tensor, eps: float = 0.0) -> Tensor:
    """Row-wise ``sqrt(sum(x**2) + eps)`` as an ``(n, 1)`` column."""
    xd = x.data
    out = np.sqrt((xd * xd).sum(axis=1, keepdims=True) + eps)
    return _make(out, (x,), lambda g: (g * xd / out,))


def log_sum_exp(x: Tensor) -> Tensor:
    """Row-wise log-sum-exp, offset by the row max."""
    xd = x.data
    m = xd.max(axis=1, keepdims=True)
    e = np.exp(xd - m)
    z = e.sum(axis=1, keepdims=True)
    out = m + np.log(z)
    return _make(out, (x,), lambda g: (g * e / z,))


# -- structure ---------------------------------------------------------------

def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if not xs:
        raise ShapeMismatch("concat of nothing")
    other = 1 - axis
    for t in xs[1:]:
        if t.shape[other] != xs[0].shape[other]:
            raise ShapeMismatch(f"concat: shapes {xs[0].shape} and {t.shape} differ on axis {other}")
    if len(xs) == 1:
        return xs[0]
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        if axis == 1:
            return [g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs))]
        return [g[bounds[i]:bounds[i + 1]] for i in range(len(xs))]

    return _make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _make(x.data[:, start:stop], (x,), backward)


def stop_gradient(x: Tensor) -> Tensor:
    """Same value, no gradient path back to ``x``."""
    return Tensor(x.data)


def gaussian_reparam(mu: Tensor, log_sigma: Tensor, noise) -> Tensor:
    """``mu + exp(log_sigma) * noise`` with ``noise`` held constant."""
    return add(mu, mul(exp(log_sigma), as_tensor(noise)))


# -- backward ----------------------------------------------------------------

def topological_order(loss: Tensor) -> list[Tensor]:
    """Graph nodes reachable from ``loss``, parents before children."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Mapping[str, Tensor] | Iterable[Tensor]) -> dict:
    """Gradients of a scalar ``loss`` w.r.t. ``params``.

    Returns a dict keyed like ``params`` (names for a mapping, positions for
    an iterable). Parameters the loss does not reach get zeros.
    """
    if loss.shape != (1, 1):
        raise NotScalarLoss(f"loss must have shape (1, 1), got {loss.shape}")
    items = list(params.items()) if isinstance(params, Mapping) else list(enumerate(params))
    grads: dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
    if loss.requires_grad:
        for node in reversed(topological_order(loss)):
            g = grads.get(id(node))
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
    out = {}
    for key, p in items:
        g = grads.get(id(p))
        out[key] = np.zeros_like(p.data) if g is None else np.array(g, dtype=np.float64).reshape(p.shape)
    return out


# -- parameters and optimizer -------------------------------------------------

class ParameterSet:
    """Named parameter tensors plus Adam moment accumulators."""

    def __init__(self, tensors: Mapping[str, Tensor] | None = None):
        self.tensors: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step_count = 0
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name: str, t: Tensor) -> Tensor:
        if name in self.tensors:
            raise KeyError(f"duplicate parameter {name!r}")
        t.requires_grad = True
        t.name = name
        self.tensors[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        return t

    def update(self, other: ParameterSet, prefix: str = "") -> None:
        for name, t in other.tensors.items():
            self.add(prefix + name, t)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self) -> int:
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def numpy(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.tensors.items()}

    def load(self, arrays: Mapping[str, np.ndarray]) -> None:
        for k, arr in arrays.items():
            self.tensors[k].data = np.array(arr, dtype=np.float64).reshape(self.tensors[k].shape)

    def backward(self, loss: Tensor) -> dict[str, np.ndarray]:
        return backward(loss, self.tensors)


def adam_step(
    params: ParameterSet,
    grads: Mapping[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterSet:
    """One bias-corrected Adam update, in place. Returns ``params``."""
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, p in params.tensors.items():
        g = grads.get(name)
        if g is None:
            continue
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
