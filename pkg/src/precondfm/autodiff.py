"""Minimal tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every node created during one forward evaluation in
creation order, which is already a topological order; :meth:`Tape.backward`
walks it in reverse and accumulates vector-Jacobian products.  Tapes are
built per call and never shared.

    tape = Tape()
    p = tape.variable(params)
    loss = f(p)            # built from Node operations
    tape.backward(loss)
    p.grad
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Node:
    __slots__ = ("value", "grad", "tape", "parents", "requires_grad")

    __array_ufunc__ = None  # make numpy defer to the reflected Node operators

    def __init__(self, value, tape: "Tape", parents=(), requires_grad=False):
        self.value = value
        self.tape = tape
        self.parents = parents  # sequence of (node, vjp)
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape})"

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(self.tape.lift(other)))

    def __rsub__(self, other):
        return add(self.tape.lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Node):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=float))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(self.tape.lift(other), self)

    def __pow__(self, p):
        return power(self, float(p))

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None):
        return sum_(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def variable(self, value) -> Node:
        node = Node(np.array(value, dtype=float), self, requires_grad=True)
        self.nodes.append(node)
        return node

    def constant(self, value) -> Node:
        return Node(np.asarray(value, dtype=float), self)

    def lift(self, value) -> Node:
        if isinstance(value, Node):
            if value.tape is not self:
                raise ValueError("node belongs to a different tape")
            return value
        return self.constant(value)

    def push(self, value, parents) -> Node:
        live = tuple((p, f) for p, f in parents if p.requires_grad)
        node = Node(value, self, live, requires_grad=bool(live))
        if live:
            self.nodes.append(node)
        return node

    def backward(self, out: Node) -> None:
        if out.value.size != 1:
            raise ValueError("backward() needs a scalar output")
        for node in self.nodes:
            node.grad = None
        out.grad = np.ones_like(out.value)
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node.parents:
                contrib = vjp(g)
                if parent.grad is None:
                    parent.grad = np.array(contrib, dtype=float)
                else:
                    parent.grad = parent.grad + contrib


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one operand must be a Node")


def add(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    sa, sb = a.value.shape, b.value.shape
    return tape.push(
        a.value + b.value,
        [(a, lambda g: _unbroadcast(g, sa)), (b, lambda g: _unbroadcast(g, sb))],
    )


def neg(a: Node) -> Node:
    return a.tape.push(-a.value, [(a, lambda g: -g)])


def mul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    return tape.push(
        av * bv,
        [(a, lambda g: _unbroadcast(g * bv, av.shape)), (b, lambda g: _unbroadcast(g * av, bv.shape))],
    )


def power(a: Node, p: float) -> Node:
    av = a.value
    return a.tape.push(av**p, [(a, lambda g: g * p * av ** (p - 1.0))])


def matmul(a, b) -> Node:
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul supports 2-D operands only")
    return tape.push(av @ bv, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def tanh(a: Node) -> Node:
    y = np.tanh(a.value)
    return a.tape.push(y, [(a, lambda g: g * (1.0 - y * y))])


def relu(a: Node) -> Node:
    mask = a.value > 0.0  # subgradient 0 at 0
    return a.tape.push(np.where(mask, a.value, 0.0), [(a, lambda g: g * mask)])


def sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(a: Node) -> Node:
    x = a.value
    s = sigmoid_np(x)
    return a.tape.push(x * s, [(a, lambda g: g * (s * (1.0 + x * (1.0 - s))))])


def exp(a: Node) -> Node:
    y = np.exp(a.value)
    return a.tape.push(y, [(a, lambda g: g * y)])


def log(a: Node) -> Node:
    x = a.value
    return a.tape.push(np.log(x), [(a, lambda g: g / x)])


def square(a: Node) -> Node:
    x = a.value
    return a.tape.push(x * x, [(a, lambda g: 2.0 * g * x)])


def sum_(a: Node, axis=None) -> Node:
    shape = a.value.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return a.tape.push(np.sum(a.value, axis=axis), [(a, vjp)])


def mean(a: Node, axis=None) -> Node:
    n = a.value.size if axis is None else a.value.shape[axis]
    return sum_(a, axis) * (1.0 / n)


def reshape(a: Node, shape) -> Node:
    old = a.value.shape
    return a.tape.push(a.value.reshape(shape), [(a, lambda g: g.reshape(old))])


def getitem(a: Node, index) -> Node:
    shape = a.value.shape

    idx = index if isinstance(index, tuple) else (index,)
    fancy = any(isinstance(i, (list, np.ndarray)) for i in idx)

    def vjp(g):
        out = np.zeros(shape)
        if fancy:
            np.add.at(out, index, g)
        else:
            out[index] = g
        return out

    return a.tape.push(a.value[index], [(a, vjp)])


def concatenate(nodes: Sequence, axis: int = -1) -> Node:
    tape = _tape_of(*nodes)
    nodes = [tape.lift(n) for n in nodes]
    sizes = [n.value.shape[axis] for n in nodes]
    bounds = np.cumsum([0] + sizes)
    parents = []
    for i, n in enumerate(nodes):
        lo, hi = bounds[i], bounds[i + 1]
        parents.append((n, lambda g, lo=lo, hi=hi: np.take(g, np.arange(lo, hi), axis=axis)))
    return tape.push(np.concatenate([n.value for n in nodes], axis=axis), parents)


ACTIVATIONS = {"tanh": tanh, "relu": relu, "silu": silu}


def check_finite(node: Node, *, layer=None, where=None) -> Node:
    if not np.all(np.isfinite(node.value)):
        raise NumericError("non-finite value", layer=layer, where=where)
    return node


def value_and_grad(fn: Callable[[Node], Node], params) -> tuple[float, np.ndarray]:
    """Evaluate scalar ``fn`` on a fresh tape and return (value, d value / d params)."""
    tape = Tape()
    p = tape.variable(params)
    out = fn(p)
    if not isinstance(out, Node):
        raise TypeError("fn must return a Node")
    value = float(np.asarray(out.value).reshape(()))
    if not np.isfinite(value):
        raise NumericError("non-finite loss", where="value_and_grad")
    tape.backward(out)
    g = p.grad if p.grad is not None else np.zeros_like(p.value)
    return value, g
