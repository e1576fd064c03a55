"""Tape-based reverse-mode differentiation over dense numpy arrays.

The op set is deliberately small: affine layers, the activations used by the
networks here (elu / relu / tanh), element-wise arithmetic, reductions, and a
few shape ops (concat / column slice). That is enough to express every loss
in this package without pulling in a tensor framework.

Conventions:
  * batch-first 2-D arrays everywhere; scalars are 0-d numpy arrays,
  * a `Var` with `tape=None` is a constant: it is never recorded and never
    receives a gradient, so the same forward code doubles as a cheap
    no-gradient evaluation path,
  * creation order on a tape is a valid topological order, so the backward
    sweep is a single reversed pass over `tape.nodes`.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, StateError

Array = np.ndarray


class Tape:
    """Records the forward pass; consumed by one backward sweep."""

    __slots__ = ("nodes", "consumed", "output")

    def __init__(self) -> None:
        self.nodes: list[Var] = []
        self.consumed = False
        self.output: Var | None = None

    def leaf(self, value: Array) -> "Var":
        """Wrap an array as a differentiable leaf on this tape."""
        v = Var(np.asarray(value, dtype=np.float64), self)
        self.nodes.append(v)
        return v

    def backward(self, out: "Var", seed: Array | float = 1.0) -> None:
        """Accumulate d(out)/d(leaf) into every leaf's .grad. One shot only."""
        if self.consumed:
            raise StateError("tape already consumed by a backward pass")
        if out.tape is not self:
            raise StateError("output var does not belong to this tape")
        self.consumed = True
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != np.shape(out.value):
            seed = np.broadcast_to(seed, np.shape(out.value)).copy()
        out.grad = seed
        for node in reversed(self.nodes):
            if node.grad is not None and node._back is not None:
                node._back(node.grad)


class Var:
    """A value plus its place in the recorded computation."""

    __slots__ = ("value", "grad", "tape", "_back")

    def __init__(self, value: Array, tape: Tape | None = None) -> None:
        self.value = value
        self.grad: Array | None = None
        self.tape = tape
        self._back: Callable[[Array], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return np.shape(self.value)

    def item(self) -> float:
        return float(self.value)

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

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)


def _as_pair(a, b):
    """Coerce operands: at least one Var; the other may be array/scalar."""
    if isinstance(a, Var) and isinstance(b, Var):
        return a, b
    if isinstance(a, Var):
        return a, Var(np.asarray(b, dtype=np.float64))
    return Var(np.asarray(a, dtype=np.float64)), b


def _tape_of(*vs: Var) -> Tape | None:
    tape = None
    for v in vs:
        if v.tape is not None:
            if tape is not None and tape is not v.tape:
                raise StateError("operands live on different tapes")
            tape = v.tape
    return tape


def _make(value: Array, tape: Tape | None, back: Callable[[Array], None] | None) -> Var:
    out = Var(value, tape)
    if tape is not None:
        out._back = back
        tape.nodes.append(out)
    return out


def _acc(v: Var, g: Array) -> None:
    if v.tape is None:
        return
    v.grad = g if v.grad is None else v.grad + g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Var:
    a, b = _as_pair(a, b)
    tape = _tape_of(a, b)
    val = a.value + b.value

    def back(g: Array) -> None:
        _acc(a, _unbroadcast(g, np.shape(a.value)))
        _acc(b, _unbroadcast(g, np.shape(b.value)))

    return _make(val, tape, back)


def sub(a, b) -> Var:
    a, b = _as_pair(a, b)
    tape = _tape_of(a, b)
    val = a.value - b.value

    def back(g: Array) -> None:
        _acc(a, _unbroadcast(g, np.shape(a.value)))
        _acc(b, _unbroadcast(-g, np.shape(b.value)))

    return _make(val, tape, back)


def mul(a, b) -> Var:
    a, b = _as_pair(a, b)
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    val = av * bv

    def back(g: Array) -> None:
        _acc(a, _unbroadcast(g * bv, np.shape(av)))
        _acc(b, _unbroadcast(g * av, np.shape(bv)))

    return _make(val, tape, back)


def div(a, b) -> Var:
    a, b = _as_pair(a, b)
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    val = av / bv

    def back(g: Array) -> None:
        _acc(a, _unbroadcast(g / bv, np.shape(av)))
        _acc(b, _unbroadcast(-g * av / (bv * bv), np.shape(bv)))

    return _make(val, tape, back)


def neg(a: Var) -> Var:
    tape = _tape_of(a)

    def back(g: Array) -> None:
        _acc(a, -g)

    return _make(-a.value, tape, back)


def square(a: Var) -> Var:
    tape = _tape_of(a)
    av = a.value

    def back(g: Array) -> None:
        _acc(a, g * (2.0 * av))

    return _make(av * av, tape, back)


# ------------------------------------------------------------- nonlinearities

def exp(a: Var) -> Var:
    tape = _tape_of(a)
    val = np.exp(a.value)

    def back(g: Array) -> None:
        _acc(a, g * val)

    return _make(val, tape, back)


def log(a: Var) -> Var:
    tape = _tape_of(a)
    av = a.value

    def back(g: Array) -> None:
        _acc(a, g / av)

    return _make(np.log(av), tape, back)


def tanh(a: Var) -> Var:
    tape = _tape_of(a)
    val = np.tanh(a.value)

    def back(g: Array) -> None:
        _acc(a, g * (1.0 - val * val))

    return _make(val, tape, back)


def relu(a: Var) -> Var:
    tape = _tape_of(a)
    av = a.value
    val = np.maximum(av, 0.0)

    def back(g: Array) -> None:
        _acc(a, g * (av > 0.0))

    return _make(val, tape, back)


def elu(a: Var) -> Var:
    # elu(x) = max(x, 0) + expm1(min(x, 0)); derivative = expm1(min(x,0)) + 1
    tape = _tape_of(a)
    av = a.value
    em1 = np.expm1(np.minimum(av, 0.0))
    val = np.maximum(av, 0.0) + em1

    def back(g: Array) -> None:
        _acc(a, g * (em1 + 1.0))

    return _make(val, tape, back)


def softplus(a: Var) -> Var:
    """log(1 + e^x), computed without overflow; d/dx = sigmoid(x)."""
    tape = _tape_of(a)
    av = a.value
    val = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))

    def back(g: Array) -> None:
        _acc(a, g / (1.0 + np.exp(-av)))

    return _make(val, tape, back)


def clip(a: Var, lo: float, hi: float) -> Var:
    """Hard clamp; gradient is zero outside [lo, hi]."""
    tape = _tape_of(a)
    av = a.value
    val = np.clip(av, lo, hi)

    def back(g: Array) -> None:
        _acc(a, g * ((av >= lo) & (av <= hi)))

    return _make(val, tape, back)


def minimum(a: Var, b: Var) -> Var:
    """Element-wise min; gradient follows the smaller operand (ties -> a)."""
    tape = _tape_of(a, b)
    av, bv = a.value, b.value
    take_a = av <= bv

    def back(g: Array) -> None:
        _acc(a, g * take_a)
        _acc(b, g * ~take_a)

    return _make(np.where(take_a, av, bv), tape, back)


# ---------------------------------------------------------------- structure

def affine(x: Var, w: Var, b: Var) -> Var:
    """x @ w.T + b for x:(B,in), w:(out,in), b:(out,)."""
    tape = _tape_of(x, w, b)
    xv, wv = x.value, w.value
    if xv.shape[-1] != wv.shape[1]:
        raise DimensionError(
            f"affine input has {xv.shape[-1]} features, weight expects {wv.shape[1]}"
        )
    val = xv @ wv.T + b.value

    def back(g: Array) -> None:
        _acc(x, g @ wv)
        _acc(w, g.T @ xv)
        _acc(b, g.sum(axis=0))

    return _make(val, tape, back)


def concat_cols(a: Var, b: Var) -> Var:
    tape = _tape_of(a, b)
    na = a.value.shape[1]

    def back(g: Array) -> None:
        _acc(a, g[:, :na])
        _acc(b, g[:, na:])

    return _make(np.concatenate([a.value, b.value], axis=1), tape, back)


def slice_cols(a: Var, lo: int, hi: int) -> Var:
    tape = _tape_of(a)
    shape = a.value.shape

    def back(g: Array) -> None:
        full = np.zeros(shape)
        full[:, lo:hi] = g
        _acc(a, full)

    return _make(a.value[:, lo:hi], tape, back)


# ---------------------------------------------------------------- reductions

def vsum(a: Var, axis: int | None = None, keepdims: bool = False) -> Var:
    tape = _tape_of(a)
    shape = np.shape(a.value)

    def back(g: Array) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, shape).copy())

    return _make(a.value.sum(axis=axis, keepdims=keepdims), tape, back)


def vmean(a: Var, axis: int | None = None, keepdims: bool = False) -> Var:
    tape = _tape_of(a)
    shape = np.shape(a.value)
    count = np.prod(shape) if axis is None else shape[axis]

    def back(g: Array) -> None:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g / count, shape).copy())

    return _make(a.value.mean(axis=axis, keepdims=keepdims), tape, back)


def const(value) -> Var:
    """An un-taped constant operand."""
    return Var(np.asarray(value, dtype=np.float64))
