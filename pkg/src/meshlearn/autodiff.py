"""Tape-based reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tape` records every operation of one evaluation in execution order,
so the reverse sweep is a plain reversed loop. Tapes are single-use: a second
call to :meth:`Tape.backward` raises.

    tape = Tape()
    w = tape.param(np.array([1.0, 2.0]))
    loss = l2sq(w)
    grads = tape.backward(loss)
    grads[w]            # array([2., 4.])
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


class Var:
    """A node on a tape: forward value plus the rule to push gradients back."""

    __slots__ = ("tape", "id", "value", "parents", "backward_fn", "is_param", "op")

    def __init__(self, tape, value, parents=(), backward_fn=None, is_param=False, op="leaf"):
        self.tape = tape
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.is_param = is_param
        self.op = op
        self.id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, _lift(self.tape, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(self.tape, other))

    def __rsub__(self, other):
        return sub(_lift(self.tape, other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, _lift(self.tape, other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _lift(self.tape, other))

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.shape})"


def _lift(tape, x):
    if isinstance(x, Var):
        if x.tape is not tape:
            raise TapeError("operands live on different tapes")
        return x
    return tape.const(x)


class Gradients(dict):
    """Mapping node id -> gradient array; also indexable by the Var itself."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.id
        return super().__getitem__(key)


class Tape:
    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: list[Var] = []
        self.consumed = False

    def param(self, value) -> Var:
        return Var(self, np.array(value, dtype=self.dtype), is_param=True)

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=self.dtype))

    def backward(self, out: Var) -> Gradients:
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if out.tape is not self:
            raise TapeError("output does not belong to this tape")
        if out.value.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {out.shape}")
        self.consumed = True

        acc: dict[int, np.ndarray] = {out.id: np.ones_like(out.value)}
        for node in reversed(self.nodes[: out.id + 1]):
            g = acc.get(node.id)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                if parent.id in acc:
                    acc[parent.id] = acc[parent.id] + pg
                else:
                    acc[parent.id] = pg

        grads = Gradients()
        for node in self.nodes:
            if node.is_param:
                grads[node.id] = acc.get(node.id, np.zeros_like(node.value))
        grads[out.id] = acc[out.id]
        return grads


def _node(tape, value, parents, backward_fn, op):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite output from {op}")
    return Var(tape, value, parents, backward_fn, op=op)


def _same_shape(a: Var, b: Var, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# elementwise binary ----------------------------------------------------------

def add(a: Var, b: Var) -> Var:
    _same_shape(a, b, "add")
    return _node(a.tape, a.value + b.value, (a, b), lambda g: (g, g), "add")


def sub(a: Var, b: Var) -> Var:
    _same_shape(a, b, "sub")
    return _node(a.tape, a.value - b.value, (a, b), lambda g: (g, -g), "sub")


def mul(a: Var, b: Var) -> Var:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    return _node(a.tape, av * bv, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Var, c: float) -> Var:
    return _node(a.tape, a.value * c, (a,), lambda g: (g * c,), "scale")


# linear algebra --------------------------------------------------------------

def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value
    if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")

    def back(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:  # matrix @ vector
            return np.outer(g, bv), av.T @ g
        if bv.ndim == 2:  # vector @ matrix
            return bv @ g, np.outer(av, g)
        return g * bv, g * av

    return _node(a.tape, av @ bv, (a, b), back, "matmul")


def add_bias(x: Var, b: Var) -> Var:
    if x.value.ndim != 2 or b.value.ndim != 1 or x.shape[1] != b.shape[0]:
        raise ShapeError(f"add_bias: incompatible shapes {x.shape} + {b.shape}")
    return _node(x.tape, x.value + b.value, (x, b), lambda g: (g, g.sum(axis=0)), "add_bias")


def dot(a: Var, b: Var) -> Var:
    _same_shape(a, b, "dot")
    av, bv = a.value, b.value
    out = np.asarray(np.vdot(av, bv), dtype=av.dtype)
    return _node(a.tape, out, (a, b), lambda g: (g * bv, g * av), "dot")


def view(flat: Var, offset: int, shape: Sequence[int]) -> Var:
    """Reshaped slice of a 1-D vector; gradient scatters back into place."""
    size = int(np.prod(shape))
    if flat.value.ndim != 1 or offset < 0 or offset + size > flat.value.size:
        raise ShapeError(f"view: [{offset}:{offset + size}] out of range for {flat.shape}")
    n = flat.value.size

    def back(g):
        full = np.zeros(n, dtype=g.dtype)
        full[offset : offset + size] = g.ravel()
        return (full,)

    return _node(flat.tape, flat.value[offset : offset + size].reshape(shape), (flat,), back, "view")


# elementwise unary -----------------------------------------------------------

def relu(x: Var) -> Var:
    mask = x.value > 0  # subgradient 0 at the kink
    return _node(x.tape, np.where(mask, x.value, 0.0).astype(x.value.dtype), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Var) -> Var:
    v = x.value
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    s = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(v.dtype)
    return _node(x.tape, s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def sin(x: Var) -> Var:
    c = np.cos(x.value)
    return _node(x.tape, np.sin(x.value), (x,), lambda g: (g * c,), "sin")


def log(x: Var) -> Var:
    v = x.value
    with np.errstate(divide="ignore", invalid="ignore"):  # _node reports the non-finite result
        out = np.log(v)
    return _node(x.tape, out, (x,), lambda g: (g / v,), "log")


def clip(x: Var, lo: float, hi: float) -> Var:
    v = x.value
    inside = (v >= lo) & (v <= hi)
    return _node(x.tape, np.clip(v, lo, hi), (x,), lambda g: (g * inside,), "clip")


def square(x: Var) -> Var:
    v = x.value
    return _node(x.tape, v * v, (x,), lambda g: (2.0 * g * v,), "square")


def log_softmax(x: Var) -> Var:
    """Row-wise log-softmax of a 2-D (batch, classes) or 1-D input."""
    v = x.value
    shifted = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)

    def back(g):
        return (g - soft * g.sum(axis=-1, keepdims=True),)

    return _node(x.tape, out, (x,), back, "log_softmax")


# reductions ------------------------------------------------------------------

def sum(x: Var) -> Var:  # noqa: A001 - mirrors numpy naming
    shape = x.shape
    return _node(x.tape, np.asarray(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(x: Var) -> Var:
    shape, n = x.shape, x.value.size
    return _node(x.tape, np.asarray(x.value.mean()), (x,), lambda g: (np.full(shape, g / n, dtype=x.value.dtype),), "mean")


def l2sq(x: Var) -> Var:
    v = x.value
    return _node(x.tape, np.asarray(np.vdot(v, v)), (x,), lambda g: (2.0 * g * v,), "l2sq")


# testing oracle --------------------------------------------------------------

def value_and_grad(f: Callable[[Var], Var], x: np.ndarray, dtype=np.float64) -> tuple[float, np.ndarray]:
    tape = Tape(dtype)
    xv = tape.param(x)
    out = f(xv)
    return float(out.value), tape.backward(out)[xv]


def _value(f: Callable[[Var], Var], x: np.ndarray) -> float:
    tape = Tape()
    out = f(tape.param(x))
    if out.value.size != 1:
        raise ShapeError("f must be scalar-valued")
    return float(out.value)


def finite_diff_check(f: Callable[[Var], Var], x: np.ndarray, eps: float = 1e-6) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |numeric|).

    ``f`` receives a parameter Var holding ``x`` on a fresh tape and must
    return a scalar Var.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(x, dtype=np.float64)
    try:
        _, analytic = value_and_grad(f, x)
    except NonFiniteError as exc:
        raise NonFiniteError(f"f is non-finite at x: {exc}") from exc

    flat = x.reshape(-1)
    numeric = np.empty(flat.size)
    for k in range(flat.size):
        xp, xm = flat.copy(), flat.copy()
        xp[k] += eps
        xm[k] -= eps
        try:
            fp = _value(f, xp.reshape(x.shape))
            fm = _value(f, xm.reshape(x.shape))
        except NonFiniteError as exc:
            raise NonFiniteError(f"f is non-finite near x (coordinate {k}): {exc}") from exc
        numeric[k] = (fp - fm) / (2 * eps)

    analytic = analytic.reshape(-1)
    if flat.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))
