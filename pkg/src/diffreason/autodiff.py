"""A small reverse-mode tape over numpy arrays.

Every operation here accepts plain arrays as well as :class:`Node` values.
When no operand is a ``Node`` the result is a plain ``ndarray``, so the same
model and logic code runs with or without a tape.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import expit


class TapeError(ValueError):
    pass


class Node:
    __slots__ = ("value", "tape", "index", "parents", "vjp")
    __array_priority__ = 100.0  # make ndarray <op> Node dispatch to Node

    def __init__(self, value, tape: "GradTape", parents=(), vjp=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.tape = tape
        self.parents: tuple[Node, ...] = parents
        self.vjp: Optional[Callable] = vjp
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Node({self.value!r})"

    def __float__(self):
        return float(self.value)

    __add__ = lambda a, b: add(a, b)
    __radd__ = lambda a, b: add(b, a)
    __sub__ = lambda a, b: sub(a, b)
    __rsub__ = lambda a, b: sub(b, a)
    __mul__ = lambda a, b: mul(a, b)
    __rmul__ = lambda a, b: mul(b, a)
    __truediv__ = lambda a, b: div(a, b)
    __rtruediv__ = lambda a, b: div(b, a)
    __neg__ = lambda a: neg(a)
    __matmul__ = lambda a, b: matmul(a, b)
    __rmatmul__ = lambda a, b: matmul(b, a)

    def __getitem__(self, idx):
        return getitem(self, idx)


class GradTape:
    """Records operations for reverse accumulation of d(scalar)/d(theta).

    A tape watches a single flat parameter vector; :meth:`gradient` always
    returns a vector of that length.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.watched: Optional[Node] = None
        self._watched_key = None
        self.cache: dict = {}  # per-tape memo for sliced weights

    def watch(self, theta: np.ndarray) -> Node:
        key = id(theta)
        if self.watched is not None:
            if self._watched_key != key:
                raise TapeError("tape already watches a different parameter vector")
            return self.watched
        self.watched = Node(np.array(theta, dtype=np.float64), self)
        self._watched_key = key
        return self.watched

    def constant(self, value) -> Node:
        return Node(value, self)

    def gradient(self, output: Node) -> np.ndarray:
        if not isinstance(output, Node) or output.tape is not self:
            raise TapeError("output was not recorded on this tape")
        if output.value.size != 1:
            raise TapeError(f"gradient needs a scalar output, got shape {output.value.shape}")
        n_theta = 0 if self.watched is None else self.watched.value.size
        grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.vjp is None:
                if node is self.watched and g is not None:
                    return g.reshape(-1).copy()
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if pg is None:
                    continue
                prev = grads.get(parent.index)
                grads[parent.index] = pg if prev is None else prev + pg
        return np.zeros(n_theta)


def _tape_of(*xs) -> Optional[GradTape]:
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    return None


def value(x) -> np.ndarray:
    """Strip the tape: the numeric value of ``x``."""
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def stop_gradient(x) -> np.ndarray:
    return value(x).copy()


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _binary(a, b, fwd, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = fwd(av, bv)
    if tape is None:
        return out
    parents, fns = [], []
    if isinstance(a, Node):
        parents.append(a)
        fns.append(lambda g: _unbroadcast(vjp_a(g, av, bv, out), av.shape))
    if isinstance(b, Node):
        parents.append(b)
        fns.append(lambda g: _unbroadcast(vjp_b(g, av, bv, out), bv.shape))
    return Node(out, tape, tuple(parents), lambda g: [f(g) for f in fns])


def _unary(x, fwd, vjp):
    xv = value(x)
    out = fwd(xv)
    if not isinstance(x, Node):
        return out
    return Node(out, x.tape, (x,), lambda g: [vjp(g, xv, out)])


def add(a, b):
    return _binary(a, b, np.add, lambda g, a, b, o: g, lambda g, a, b, o: g)


def sub(a, b):
    return _binary(a, b, np.subtract, lambda g, a, b, o: g, lambda g, a, b, o: -g)


def mul(a, b):
    return _binary(a, b, np.multiply, lambda g, a, b, o: g * b, lambda g, a, b, o: g * a)


def div(a, b):
    return _binary(a, b, np.divide, lambda g, a, b, o: g / b, lambda g, a, b, o: -g * a / (b * b))


def neg(x):
    return _unary(x, np.negative, lambda g, x, o: -g)


def matmul(a, b):
    def vjp_a(g, a, b, o):
        if b.ndim == 1:
            return np.outer(g, b) if a.ndim == 2 else g * b
        return g @ b.T

    def vjp_b(g, a, b, o):
        if b.ndim == 1:
            return a.T @ g
        if a.ndim == 1:
            return np.outer(a, g)
        return a.T @ g

    return _binary(a, b, np.matmul, vjp_a, vjp_b)


def tanh(x):
    return _unary(x, np.tanh, lambda g, x, o: g * (1.0 - o * o))


def sigmoid(x):
    return _unary(x, expit, lambda g, x, o: g * o * (1.0 - o))


def exp(x):
    return _unary(x, np.exp, lambda g, x, o: g * o)


def log(x):
    return _unary(x, np.log, lambda g, x, o: g / x)


def clip(x, lo: float, hi: float):
    """Clamp to ``[lo, hi]``; the gradient is zero where clamping is active."""
    return _unary(x, lambda v: np.clip(v, lo, hi),
                  lambda g, x, o: g * ((x >= lo) & (x <= hi)))


def total(x, axis=None):
    xv = value(x)
    out = np.sum(xv, axis=axis)
    if not isinstance(x, Node):
        return out

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return [np.broadcast_to(g, xv.shape).copy()]

    return Node(out, x.tape, (x,), vjp)


def _logsumexp(v):
    top = v.max(axis=-1, keepdims=True)
    return top + np.log(np.exp(v - top).sum(axis=-1, keepdims=True))


def log_softmax(x):
    """Log-softmax over the last axis."""
    def fwd(v):
        return v - _logsumexp(v)

    def vjp(g, v, o):
        return g - np.exp(o) * g.sum(axis=-1, keepdims=True)

    return _unary(x, fwd, vjp)


def softmax(x):
    def fwd(v):
        e = np.exp(v - v.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)

    def vjp(g, v, o):
        return o * (g - (g * o).sum(axis=-1, keepdims=True))

    return _unary(x, fwd, vjp)


def getitem(x, idx):
    xv = value(x)
    out = xv[idx]
    if not isinstance(x, Node):
        return out

    def vjp(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        return [full]

    return Node(np.array(out), x.tape, (x,), vjp)


def reshape(x, shape):
    xv = value(x)
    return _unary(x, lambda v: v.reshape(shape), lambda g, v, o: g.reshape(xv.shape))


def stack(xs: Sequence, axis: int = 0):
    tape = _tape_of(*xs)
    vals = [value(x) for x in xs]
    out = np.stack(vals, axis=axis)
    if tape is None:
        return out
    parents = tuple(x if isinstance(x, Node) else tape.constant(x) for x in xs)

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(len(vals))]

    return Node(out, tape, parents, vjp)
