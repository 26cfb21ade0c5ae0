"""Minimal reverse-mode differentiation over float64 numpy arrays.

Only the operations the model graph needs are provided. Every op returns a
:class:`Node`; calling :func:`backward` on a scalar node fills ``.grad`` on every
leaf created with ``requires_grad=True``.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

Array = np.ndarray


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(
        self,
        value,
        parents: Sequence["Node"] = (),
        backward_fn: Callable[[Array], Sequence[Array | None]] | None = None,
        requires_grad: bool = False,
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Array | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(shape={self.shape}, requires_grad={self.requires_grad})"

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

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def leaf(value, requires_grad: bool = True) -> Node:
    return Node(np.array(value, dtype=np.float64), requires_grad=requires_grad)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _make(value, parents, fn) -> Node:
    node = Node(value, parents)
    if node.requires_grad:
        node.backward_fn = fn
    else:
        node.parents = ()
    return node


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    return _make(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    out = a.value / b.value
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
    )


def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul expects 2-d operands; use einsum otherwise")
    return _make(
        a.value @ b.value,
        (a, b),
        lambda g: (g @ b.value.T, a.value.T @ g),
    )


def einsum(subscripts: str, a, b) -> Node:
    """Two-operand einsum with explicit output, e.g. ``'rb,bij->rij'``."""
    a, b = as_node(a), as_node(b)
    ins, out = subscripts.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    value = np.einsum(subscripts, a.value, b.value)

    def fn(g):
        return (
            np.einsum(f"{out},{sb}->{sa}", g, b.value) if a.requires_grad else None,
            np.einsum(f"{sa},{out}->{sb}", a.value, g) if b.requires_grad else None,
        )

    return _make(value, (a, b), fn)


def transpose(a) -> Node:
    a = as_node(a)
    return _make(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Node:
    a = as_node(a)
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(value, (a,), fn)


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def relu(a) -> Node:
    a = as_node(a)
    # subgradient at exactly 0 is 0
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,))


def exp(a) -> Node:
    a = as_node(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Node:
    a = as_node(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a) -> Node:
    a = as_node(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def square(a) -> Node:
    a = as_node(a)
    return _make(a.value**2, (a,), lambda g: (2.0 * g * a.value,))


def softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), fn)


def log_softmax(a, axis: int = -1) -> Node:
    a = as_node(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def fn(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), fn)


def take(a, index, axis: int = 0) -> Node:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    a = as_node(a)
    index = np.asarray(index, dtype=np.int64)

    def fn(g):
        out = np.zeros_like(a.value)
        if axis == 0:
            np.add.at(out, index, g)
        else:
            moved = np.moveaxis(out, axis, 0)
            np.add.at(moved, index, np.moveaxis(g, axis, 0))
        return (out,)

    return _make(np.take(a.value, index, axis=axis), (a,), fn)


def segment_sum(a, segments, n_segments: int) -> Node:
    """Scatter-add rows of ``a`` into ``n_segments`` output rows."""
    a = as_node(a)
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((n_segments,) + a.shape[1:])
    np.add.at(out, segments, a.value)
    return _make(out, (a,), lambda g: (g[segments],))


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [as_node(n) for n in nodes]
    value = np.concatenate([n.value for n in nodes], axis=axis)
    bounds = np.cumsum([n.shape[axis] for n in nodes])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(value, nodes, fn)


def stack(nodes: Sequence, axis: int = 0) -> Node:
    nodes = [as_node(n) for n in nodes]
    value = np.stack([n.value for n in nodes], axis=axis)

    def fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(nodes)))

    return _make(value, nodes, fn)


def backward(root: Node) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar root")
    order: list[Node] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack_.append((p, False))

    grads: dict[int, Array] = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg
