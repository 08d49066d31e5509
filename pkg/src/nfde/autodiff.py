"""Reverse-mode automatic differentiation on an append-only tape.

Nodes hold numpy values (scalars or small arrays).  Every op in this module
accepts plain numbers/arrays or :class:`Var` handles; with no ``Var`` among
its arguments an op just returns the numpy value, so the same model and
solver code runs taped or untaped and produces identical numbers.

    >>> tape = Tape()
    >>> x = tape.parameter(3.0, "x")
    >>> y = tape.parameter(4.0, "y")
    >>> grads = tape.backward(x * y)
    >>> float(grads.wrt(x)), float(grads.wrt(y))
    (4.0, 3.0)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from . import numerics

__all__ = [
    "Tape",
    "Node",
    "Var",
    "Gradients",
    "NonFiniteError",
    "InvalidParentError",
    "value_of",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "pow_const",
    "pow_base",
    "exp",
    "ln",
    "tanh",
    "sigmoid",
    "gamma_fn",
    "matvec",
    "total",
    "take",
    "concat",
    "weighted_sum",
    "grad_check",
]

OP_KINDS = frozenset(
    {
        "input",
        "constant",
        "add",
        "sub",
        "mul",
        "div",
        "neg",
        "pow_const",
        "pow_base",
        "exp",
        "tanh",
        "sigmoid",
        "ln",
        "gamma",
        "matvec",
        "sum",
        "take",
        "concat",
        "weighted_sum",
    }
)

# Replacement for the infinite slope of x**c (c < 1) at x = 0.
POW_CLAMP = 1e12

LocalGrad = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


class NonFiniteError(ArithmeticError):
    def __init__(self, message: str, node_id: int | None = None):
        super().__init__(message)
        self.node_id = node_id


class InvalidParentError(ValueError):
    pass


@dataclass
class Node:
    value: np.ndarray
    op_kind: str
    parents: tuple[int, ...] = ()
    # Either an elementwise partial (broadcast against the adjoint) or a
    # vector-Jacobian callable mapping the node adjoint to the parent adjoint.
    local_grads: tuple[LocalGrad, ...] = ()


class Var:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")
    __array_priority__ = 1000

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return np.shape(self.value)

    def __len__(self):
        return len(self.value)

    def __repr__(self):
        return f"Var(id={self.id}, value={self.value!r})"

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
        return neg(self)

    def __pow__(self, c):
        return pow_const(self, c)

    def __getitem__(self, idx):
        return take(self, idx)


@dataclass
class Gradients:
    adjoints: list
    output: int

    def wrt(self, var: Var | int) -> np.ndarray:
        """Adjoint of ``var``; zeros when the output does not depend on it."""
        node_id = var.id if isinstance(var, Var) else var
        adj = self.adjoints[node_id]
        if adj is None:
            return np.zeros_like(np.asarray(self._values[node_id], dtype=float))
        return adj

    _values: list = field(default_factory=list, repr=False)
    _params: dict = field(default_factory=dict, repr=False)

    def parameters(self) -> dict[str, np.ndarray]:
        """Adjoints of every named parameter node."""
        return {name: self.wrt(i) for name, i in self._params.items()}


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []
        self.parameter_index: dict[str, int] = {}
        self.clamp_count = 0

    def __len__(self):
        return len(self.nodes)

    def record(
        self,
        op_kind: str,
        parent_ids: Sequence[int],
        value,
        local_grads: Sequence[LocalGrad] = (),
    ) -> int:
        if op_kind not in OP_KINDS:
            raise ValueError(f"unknown op kind {op_kind!r}")
        n = len(self.nodes)
        for p in parent_ids:
            if not (0 <= p < n):
                raise InvalidParentError(f"parent {p} does not exist on a tape of {n} nodes")
        if len(local_grads) != len(parent_ids):
            raise ValueError("one local gradient per parent is required")
        for g in local_grads:
            if not callable(g) and not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite local gradient for {op_kind} node", n)
        self.nodes.append(Node(np.asarray(value, dtype=float), op_kind, tuple(parent_ids), tuple(local_grads)))
        return n

    def constant(self, value) -> Var:
        return Var(self, self.record("constant", (), value))

    def input(self, value) -> Var:
        return Var(self, self.record("input", (), value))

    def parameter(self, value, name: str) -> Var:
        """Record an input node and register it as a named parameter."""
        var = self.input(value)
        self.parameter_index[name] = var.id
        return var

    def backward(self, output: Var | int) -> Gradients:
        """Single reverse sweep from ``output`` (seeded with adjoint 1)."""
        out_id = output.id if isinstance(output, Var) else output
        if not (0 <= out_id < len(self.nodes)):
            raise InvalidParentError(f"output node {out_id} is not on the tape")
        nodes = self.nodes
        adj: list = [None] * len(nodes)
        adj[out_id] = np.ones_like(nodes[out_id].value)
        for i in range(out_id, -1, -1):
            a = adj[i]
            if a is None:
                continue
            if not np.all(np.isfinite(a)):
                raise NonFiniteError(f"non-finite adjoint at node {i}", i)
            node = nodes[i]
            for p, g in zip(node.parents, node.local_grads):
                if callable(g):
                    contrib = g(a)
                else:
                    contrib = _unbroadcast(a * g, nodes[p].value.shape)
                if adj[p] is None:
                    adj[p] = np.array(contrib, dtype=float)
                else:
                    adj[p] = adj[p] + contrib
        return Gradients(adj, out_id, [n.value for n in nodes], dict(self.parameter_index))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def value_of(x):
    """Numeric value of a Var or passthrough for plain numbers/arrays."""
    return x.value if isinstance(x, Var) else x


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Var):
            return a.tape
    return None


def _emit(op_kind, args, value, grads):
    """Record ``value`` when any argument is taped; ``grads`` lists (arg, local_grad) pairs lazily."""
    tape = _tape_of(*args)
    if tape is None:
        return value
    parents = []
    locals_ = []
    for arg, g in grads():
        if isinstance(arg, Var):
            if arg.tape is not tape:
                raise InvalidParentError("cannot mix Vars from different tapes")
            parents.append(arg.id)
            locals_.append(g)
    return Var(tape, tape.record(op_kind, parents, value, locals_))


def add(a, b):
    va, vb = value_of(a), value_of(b)
    return _emit("add", (a, b), np.add(va, vb), lambda: ((a, 1.0), (b, 1.0)))


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    return _emit("sub", (a, b), np.subtract(va, vb), lambda: ((a, 1.0), (b, -1.0)))


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    return _emit(
        "mul", (a, b), np.multiply(va, vb), lambda: ((a, np.asarray(vb, float)), (b, np.asarray(va, float)))
    )


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = np.divide(va, vb)
    return _emit(
        "div", (a, b), out, lambda: ((a, 1.0 / np.asarray(vb, float)), (b, -np.asarray(out) / vb))
    )


def neg(a):
    return _emit("neg", (a,), np.negative(value_of(a)), lambda: ((a, -1.0),))


def pow_const(a, c: float):
    """``a ** c`` for a constant exponent."""
    va = np.asarray(value_of(a), dtype=float)
    out = np.power(va, c)

    def grads():
        with np.errstate(divide="ignore", invalid="ignore"):
            g = c * np.power(va, c - 1.0)
        bad = ~np.isfinite(g)
        if np.any(bad):
            a.tape.clamp_count += int(np.count_nonzero(bad))
            g = np.where(bad, POW_CLAMP, g)
        return ((a, g),)

    return _emit("pow_const", (a,), out, grads)


def pow_base(base, e):
    """``base ** e`` for a constant non-negative base and a differentiable exponent.

    The slope ``base**e * ln(base)`` is taken as 0 where ``base == 0``.
    """
    vb = np.asarray(base, dtype=float)
    ve = value_of(e)
    out = np.power(vb, ve)

    def grads():
        with np.errstate(divide="ignore"):
            logb = np.where(vb > 0, np.log(np.where(vb > 0, vb, 1.0)), 0.0)
        return ((e, out * logb),)

    return _emit("pow_base", (e,), out, grads)


def exp(a):
    out = np.exp(value_of(a))
    return _emit("exp", (a,), out, lambda: ((a, out),))


def ln(a):
    va = value_of(a)
    return _emit("ln", (a,), np.log(va), lambda: ((a, 1.0 / np.asarray(va, float)),))


def tanh(a):
    out = np.tanh(value_of(a))
    return _emit("tanh", (a,), out, lambda: ((a, 1.0 - out * out),))


def sigmoid(a):
    va = np.asarray(value_of(a), dtype=float)
    # split by sign so neither branch overflows
    ez = np.exp(-np.abs(va))
    out = np.where(va >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))
    if out.ndim == 0:
        out = out[()]
    return _emit("sigmoid", (a,), out, lambda: ((a, out * (1.0 - out)),))


def gamma_fn(a):
    """Gamma of a positive scalar, slope Gamma(a) * digamma(a)."""
    va = float(value_of(a))
    out = numerics.gamma(va)
    return _emit("gamma", (a,), np.float64(out), lambda: ((a, np.float64(out * numerics.digamma(va))),))


def matvec(w, x):
    """Matrix-vector product ``w @ x``."""
    vw = np.asarray(value_of(w), dtype=float)
    vx = np.asarray(value_of(x), dtype=float)
    return _emit(
        "matvec",
        (w, x),
        vw @ vx,
        lambda: ((w, lambda g: np.outer(g, vx)), (x, lambda g: vw.T @ g)),
    )


def total(a):
    """Sum of all elements."""
    va = np.asarray(value_of(a), dtype=float)
    shape = va.shape
    return _emit("sum", (a,), va.sum(), lambda: ((a, lambda g: np.broadcast_to(g, shape).copy()),))


def take(a, idx):
    """Indexing/slicing ``a[idx]`` (basic or integer-array indexing)."""
    va = np.asarray(value_of(a), dtype=float)
    out = va[idx]

    def vjp(g):
        full = np.zeros_like(va)
        np.add.at(full, idx, g)
        return full

    return _emit("take", (a,), np.array(out, dtype=float), lambda: ((a, vjp),))


def concat(parts: Sequence):
    """Concatenate 0-d/1-d pieces into one vector."""
    vals = [np.atleast_1d(np.asarray(value_of(p), dtype=float)) for p in parts]
    out = np.concatenate(vals)
    offsets = np.cumsum([0] + [v.size for v in vals])

    def grads():
        res = []
        for k, p in enumerate(parts):
            lo, hi = offsets[k], offsets[k + 1]
            shape = np.shape(value_of(p))
            res.append((p, lambda g, lo=lo, hi=hi, shape=shape: g[lo:hi].reshape(shape)))
        return res

    return _emit("concat", tuple(parts), out, grads)


def weighted_sum(weights, items: Sequence):
    """``sum_j weights[j] * items[j]`` for equally shaped items; one node regardless of length."""
    items = list(items)
    vw = np.asarray(value_of(weights), dtype=float)
    stacked = np.stack([np.asarray(value_of(x), dtype=float) for x in items])
    out = np.tensordot(vw, stacked, axes=1)

    def grads():
        res = [(weights, lambda g: stacked.reshape(len(items), -1) @ np.ravel(g))]
        for j, x in enumerate(items):
            res.append((x, lambda g, j=j: vw[j] * g))
        return res

    return _emit("weighted_sum", (weights, *items), out, grads)


def grad_check(
    fn: Callable[[Var], Var],
    params: Sequence[float],
    eps: float = 1e-5,
) -> float:
    """Max componentwise error between tape gradients and central differences.

    ``fn`` receives the parameters as one taped vector and returns a scalar
    Var.  The error for each component is ``|g_ad - g_fd| / max(1, |g_fd|)``.
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    p0 = np.asarray(params, dtype=float).copy()
    tape = Tape()
    x = tape.parameter(p0, "params")
    grads = tape.backward(fn(x))
    g_ad = np.asarray(grads.wrt(x), dtype=float)

    def f(p):
        t = Tape()
        return float(value_of(fn(t.parameter(p, "params"))))

    worst = 0.0
    for i in range(p0.size):
        up = p0.copy()
        dn = p0.copy()
        up.flat[i] += eps
        dn.flat[i] -= eps
        g_fd = (f(up) - f(dn)) / (2.0 * eps)
        worst = max(worst, abs(g_ad.flat[i] - g_fd) / max(1.0, abs(g_fd)))
    return worst
