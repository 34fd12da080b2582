"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Variable` wraps an ``ndarray`` value together with the closure that
maps the gradient of its output back onto its parents. Plain arrays and
scalars are accepted anywhere a ``Variable`` is and are treated as constants.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Evaluate operations without recording the graph."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Variable:
    """A value in the computation graph.

    ``grad`` is allocated lazily by :func:`backward` and always has the shape
    of ``value``.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(
        self,
        value,
        requires_grad: bool = False,
        parents: Sequence["Variable"] = (),
        backward: Callable | None = None,
        name: str | None = None,
    ):
        self.value = np.asarray(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Variable{label}(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return mul(self, -1.0)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_variable(x) -> Variable:
    return x if isinstance(x, Variable) else Variable(x)


def value_of(x):
    # Python scalars stay scalars so they do not promote float32 data.
    if isinstance(x, Variable):
        return x.value
    if isinstance(x, (int, float)):
        return x
    return np.asarray(x)


def make_node(value: np.ndarray, parents: Iterable, backward: Callable) -> Variable:
    """Create the output node of an op.

    ``backward(g)`` must return one gradient (or None) per parent. Parents that
    are constants never receive anything and the graph is not recorded at all
    when no parent requires a gradient.
    """
    parents = tuple(as_variable(p) for p in parents)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Variable(value, requires_grad=True, parents=parents, backward=backward)
    return Variable(value)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: Variable) -> list[Variable]:
    order: list[Variable] = []
    visited: set[int] = set()
    stack: list[tuple[Variable, bool]] = [(root, False)]
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


def backward(loss: Variable, params=None) -> dict[str, np.ndarray] | None:
    """Back-propagate from a scalar ``loss``.

    Leaf variables that require a gradient get ``.grad`` populated (accumulated
    onto any existing gradient). When ``params`` (a mapping of id to leaf
    Variable) is given, the returned dict holds a gradient for every entry,
    zeros for leaves the loss does not reach.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
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
    if params is None:
        return None
    out = {}
    for key, var in params.items():
        out[key] = var.grad if var.grad is not None else np.zeros_like(var.value)
    return out


# elementwise arithmetic ----------------------------------------------------


def add(a, b) -> Variable:
    av, bv = value_of(a), value_of(b)

    def bw(g):
        return unbroadcast(g, np.shape(av)), unbroadcast(g, np.shape(bv))

    return make_node(av + bv, (a, b), bw)


def sub(a, b) -> Variable:
    av, bv = value_of(a), value_of(b)

    def bw(g):
        return unbroadcast(g, np.shape(av)), unbroadcast(-g, np.shape(bv))

    return make_node(av - bv, (a, b), bw)


def mul(a, b) -> Variable:
    av, bv = value_of(a), value_of(b)

    def bw(g):
        return unbroadcast(g * bv, np.shape(av)), unbroadcast(g * av, np.shape(bv))

    return make_node(av * bv, (a, b), bw)


def div(a, b) -> Variable:
    av, bv = value_of(a), value_of(b)
    out = av / bv

    def bw(g):
        ga = g / bv
        return unbroadcast(ga, np.shape(av)), unbroadcast(-ga * out, np.shape(bv))

    return make_node(out, (a, b), bw)


def square(x) -> Variable:
    xv = value_of(x)
    return make_node(xv * xv, (x,), lambda g: (2.0 * xv * g,))


def sqrt(x) -> Variable:
    xv = value_of(x)
    out = np.sqrt(xv)
    return make_node(out, (x,), lambda g: (g * 0.5 / out,))


def abs_(x) -> Variable:
    """Absolute value; the subgradient at exactly zero is 0."""
    xv = value_of(x)
    return make_node(np.abs(xv), (x,), lambda g: (g * np.sign(xv),))


def exp(x) -> Variable:
    out = np.exp(value_of(x))
    return make_node(out, (x,), lambda g: (g * out,))


def leaky_relu(x, slope: float = 0.1) -> Variable:
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"slope must lie in [0, 1), got {slope}")
    xv = value_of(x)
    positive = xv >= 0
    scale = np.where(positive, 1.0, slope).astype(xv.dtype)
    return make_node(xv * scale, (x,), lambda g: (g * scale,))


# shape manipulation ----------------------------------------------------------


def sum_(x, axis=None, keepdims: bool = False) -> Variable:
    xv = value_of(x)
    out = xv.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xv.shape).astype(xv.dtype, copy=True),)

    return make_node(np.asarray(out), (x,), bw)


def reshape(x, shape) -> Variable:
    xv = value_of(x)
    return make_node(xv.reshape(shape), (x,), lambda g: (g.reshape(xv.shape),))


def getitem(x, index) -> Variable:
    xv = value_of(x)

    def bw(g):
        full = np.zeros_like(xv)
        if _has_fancy(index):
            np.add.at(full, index, g)
        else:
            full[index] = g
        return (full,)

    return make_node(xv[index], (x,), bw)


def _has_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(xs: Sequence, axis: int = 1) -> Variable:
    values = [value_of(x) for x in xs]
    bounds = np.cumsum([0] + [v.shape[axis] for v in values])

    def bw(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_node(np.concatenate(values, axis=axis), xs, bw)


def pad2d(x, pad: int) -> Variable:
    """Zero-pad the two trailing (spatial) axes by ``pad`` on every side."""
    xv = value_of(x)
    if pad == 0:
        return as_variable(x)
    widths = [(0, 0)] * (xv.ndim - 2) + [(pad, pad), (pad, pad)]

    def bw(g):
        return (g[..., pad:-pad, pad:-pad],)

    return make_node(np.pad(xv, widths), (x,), bw)
