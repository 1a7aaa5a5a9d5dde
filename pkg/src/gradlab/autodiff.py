"""Tape-based reverse-mode automatic differentiation.

A computation is an ordinary Python callable ``f(env)`` that looks up its
parameters and inputs by name in ``env`` and combines them with the
primitives defined here (or the operator overloads on :class:`Node`).
Evaluating it records every primitive on a :class:`Tape`; :func:`backward`
walks that tape in reverse.

Every adjoint rule is itself written in terms of the same primitives, so a
backward sweep run with ``create_graph=True`` is recorded onto the tape and
can be differentiated again. :func:`hvp` uses this to obtain exact
Hessian-vector products (reverse-over-reverse).
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import CompositionError, ContractError, DimensionError
from .ndcore import matmul as _nd_matmul

__all__ = [
    "Node",
    "Tape",
    "eval_with_tape",
    "backward",
    "grad",
    "value_and_grad",
    "hvp",
    "value_of",
    "ravel",
    "unravel",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "reduce_sum",
    "reduce_mean",
    "exp",
    "log",
    "relu",
    "maximum",
    "minimum",
    "sigmoid",
    "tanh",
]


@dataclass(frozen=True)
class _Op:
    name: str
    forward: Callable
    vjp: Callable | None  # (g, out, *parents, **attrs) -> tuple of parent adjoints


_OPS: dict[str, _Op] = {}


def _register(name, forward, vjp):
    _OPS[name] = _Op(name, forward, vjp)


class Node:
    """One recorded value on a tape."""

    __slots__ = ("tape", "index", "op", "parents", "attrs", "value", "name")
    __array_priority__ = 100.0  # make ndarray <op> Node defer to Node

    def __init__(self, tape, op, parents, value, attrs=None, name=None):
        self.tape = tape
        self.op = op
        self.parents = parents
        self.attrs = attrs or {}
        self.value = value
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node#{self.index}<{self.op}{label} shape={self.value.shape}>"

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)


class Tape:
    """Append-only record of primitive applications, in evaluation order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.output: Node | None = None

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name=None, kind="const"):
        return Node(self, kind, (), np.asarray(value, dtype=np.float64), name=name)

    @property
    def params(self):
        return {n.name: n for n in self.nodes if n.op == "param"}

    def primitives(self):
        """Op names of the non-leaf nodes, in order."""
        return [n.op for n in self.nodes if n.op not in ("param", "const")]

    def replay(self, params=None):
        """Re-run the recorded forward computation and return the output value.

        ``params`` optionally overrides parameter leaves by name.
        """
        vals = {}
        for n in self.nodes:
            if n.op == "param" and params is not None and n.name in params:
                vals[n.index] = np.asarray(params[n.name], dtype=np.float64)
            elif n.op in ("param", "const"):
                vals[n.index] = n.value
            else:
                args = [vals[p.index] for p in n.parents]
                vals[n.index] = _OPS[n.op].forward(*args, **n.attrs)
            if self.output is not None and n.index == self.output.index:
                break
        return vals[self.output.index]


# -- dispatch -------------------------------------------------------------

def value_of(x):
    """Primal value of a Node, or ``x`` itself for raw arrays and scalars."""
    return x.value if isinstance(x, Node) else x


_val = value_of


def _tape_of(args):
    for a in args:
        if isinstance(a, Node):
            return a.tape
    return None


def _apply(name, *args, **attrs):
    op = _OPS[name]
    tape = _tape_of(args)
    raw = [np.asarray(_val(a), dtype=np.float64) for a in args]
    out = np.asarray(op.forward(*raw, **attrs), dtype=np.float64)
    if tape is None:
        return out
    parents = tuple(
        a if isinstance(a, Node) and a.tape is tape else tape.leaf(_val(a)) for a in args
    )
    return Node(tape, name, parents, out, attrs)


def _check_broadcast(a, b, opname):
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    if sa != sb and sa != () and sb != ():
        raise DimensionError(f"{opname}: shapes {sa} and {sb} differ (only scalar broadcasting)")


def _unbroadcast(g, shape):
    if np.shape(_val(g)) == tuple(shape):
        return g
    return reduce_sum(g)


# -- primitives -----------------------------------------------------------

def add(a, b):
    _check_broadcast(a, b, "add")
    return _apply("add", a, b)


def sub(a, b):
    _check_broadcast(a, b, "sub")
    return _apply("sub", a, b)


def mul(a, b):
    _check_broadcast(a, b, "mul")
    return _apply("mul", a, b)


def div(a, b):
    _check_broadcast(a, b, "div")
    return _apply("div", a, b)


def neg(a):
    return _apply("neg", a)


def matmul(a, b):
    sa, sb = np.shape(_val(a)), np.shape(_val(b))
    if len(sa) != 2 or len(sb) not in (1, 2) or sa[1] != sb[0]:
        raise DimensionError(f"matmul shape mismatch: {sa} and {sb}")
    return _apply("matmul", a, b)


def transpose(a):
    return _apply("transpose", a)


def reshape(a, shape):
    return _apply("reshape", a, shape=tuple(shape))


def reduce_sum(a):
    return _apply("reduce_sum", a)


def reduce_mean(a):
    return _apply("reduce_mean", a)


def exp(a):
    return _apply("exp", a)


def log(a):
    return _apply("log", a)


def relu(a):
    return _apply("relu", a)


def maximum(a, c):
    """Elementwise ``max(a, c)`` against the scalar constant ``c``."""
    return _apply("maximum", a, c=float(c))


def minimum(a, c):
    return _apply("minimum", a, c=float(c))


def sigmoid(a):
    return _apply("sigmoid", a)


def tanh(a):
    return _apply("tanh", a)


def _stable_sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _fsum(a):
    # strict left-to-right order; np.sum uses pairwise summation
    total = 0.0
    for v in np.ravel(a).tolist():
        total += v
    return np.float64(total)


# Adjoint rules. ``g`` and ``out`` are Nodes when building a
# differentiable backward graph and ndarrays otherwise.

def _vjp_add(g, out, a, b):
    return _unbroadcast(g, np.shape(_val(a))), _unbroadcast(g, np.shape(_val(b)))


def _vjp_sub(g, out, a, b):
    return _unbroadcast(g, np.shape(_val(a))), _unbroadcast(neg(g), np.shape(_val(b)))


def _vjp_mul(g, out, a, b):
    return (
        _unbroadcast(mul(g, b), np.shape(_val(a))),
        _unbroadcast(mul(g, a), np.shape(_val(b))),
    )


def _vjp_div(g, out, a, b):
    ga = div(g, b)
    gb = neg(div(mul(g, out), b))
    return _unbroadcast(ga, np.shape(_val(a))), _unbroadcast(gb, np.shape(_val(b)))


def _vjp_matmul(g, out, a, b):
    if np.ndim(_val(b)) == 1:
        m, n = np.shape(_val(a))
        ga = matmul(reshape(g, (m, 1)), reshape(b, (1, n)))
    else:
        ga = matmul(g, transpose(b))
    return ga, matmul(transpose(a), g)


def _vjp_reshape(g, out, a, shape):
    return (reshape(g, np.shape(_val(a))),)


def _vjp_reduce_sum(g, out, a):
    return (mul(g, np.ones(np.shape(_val(a)))),)


def _vjp_reduce_mean(g, out, a):
    shape = np.shape(_val(a))
    return (mul(g, np.full(shape, 1.0 / max(int(np.prod(shape)), 1))),)


def _vjp_maximum(g, out, a, c):
    return (mul(g, (_val(a) > c).astype(np.float64)),)


def _vjp_minimum(g, out, a, c):
    return (mul(g, (_val(a) < c).astype(np.float64)),)


_register("add", np.add, _vjp_add)
_register("sub", np.subtract, _vjp_sub)
_register("mul", np.multiply, _vjp_mul)
_register("div", np.divide, _vjp_div)
_register("neg", np.negative, lambda g, out, a: (neg(g),))
_register("matmul", _nd_matmul, _vjp_matmul)
_register("transpose", np.transpose, lambda g, out, a: (transpose(g),))
_register("reshape", lambda a, shape: np.reshape(a, shape), _vjp_reshape)
_register("reduce_sum", _fsum, _vjp_reduce_sum)
_register("reduce_mean", lambda a: _fsum(a) / max(a.size, 1), _vjp_reduce_mean)
_register("exp", np.exp, lambda g, out, a: (mul(g, out),))
_register("log", np.log, lambda g, out, a: (div(g, a),))
_register("relu", lambda a: np.maximum(a, 0.0), lambda g, out, a: (mul(g, (_val(a) > 0).astype(np.float64)),))
_register("maximum", lambda a, c: np.maximum(a, c), _vjp_maximum)
_register("minimum", lambda a, c: np.minimum(a, c), _vjp_minimum)
_register("sigmoid", _stable_sigmoid, lambda g, out, a: (mul(g, mul(out, sub(1.0, out))),))
_register("tanh", np.tanh, lambda g, out, a: (mul(g, sub(1.0, mul(out, out))),))


# -- evaluation and reverse sweep -----------------------------------------

class _Env(Mapping):
    def __init__(self, bindings):
        self._b = bindings

    def __getitem__(self, name):
        try:
            return self._b[name]
        except KeyError:
            raise CompositionError(
                f"computation references unbound name {name!r}; bound: {sorted(self._b)}"
            ) from None

    def __iter__(self):
        return iter(self._b)

    def __len__(self):
        return len(self._b)


def eval_with_tape(f, params, inputs=None):
    """Evaluate ``f(env)`` and return ``(value, tape)``.

    ``params`` are recorded as differentiable leaves, ``inputs`` as
    constants. The output must be a scalar (shape ``()``).
    """
    inputs = inputs or {}
    clash = set(params) & set(inputs)
    if clash:
        raise CompositionError(f"names bound as both params and inputs: {sorted(clash)}")
    tape = Tape()
    bindings = {}
    for name, v in params.items():
        bindings[name] = tape.leaf(v, name=name, kind="param")
    for name, v in inputs.items():
        bindings[name] = tape.leaf(v, name=name)
    out = f(_Env(bindings))
    if not isinstance(out, Node):
        out = tape.leaf(out)
    if out.shape != ():
        raise ContractError(f"computation must return a scalar, got shape {out.shape}")
    tape.output = out
    return np.float64(out.value), tape


def backward(tape, seed=1.0, *, output=None, create_graph=False):
    """Reverse sweep: ``seed * d(output)/d(param)`` for every parameter leaf.

    With ``create_graph`` the adjoints are Nodes recorded on ``tape``.
    """
    out = tape.output if output is None else output
    params = tape.params
    if create_graph:
        seed_adj = seed if isinstance(seed, Node) else tape.leaf(np.full(out.shape, float(seed)))
    else:
        # sweep with unit seed and scale at the end, so results are exactly linear in seed
        seed_adj = np.ones(out.shape)
    adj = {out.index: seed_adj}
    for node in reversed(tape.nodes[: out.index + 1]):
        g = adj.get(node.index)
        if g is None or not node.parents:
            continue
        del adj[node.index]
        op = _OPS[node.op]
        if create_graph:
            contribs = op.vjp(g, node, *node.parents, **node.attrs)
        else:
            contribs = op.vjp(g, node.value, *[p.value for p in node.parents], **node.attrs)
        for parent, c in zip(node.parents, contribs):
            if parent.op == "const":
                continue
            prev = adj.get(parent.index)
            adj[parent.index] = c if prev is None else add(prev, c)
    result = {}
    for name, leaf in params.items():
        g = adj.get(leaf.index)
        if g is None:
            g = np.zeros(leaf.shape)
            if create_graph:
                g = tape.leaf(g)
        elif not create_graph:
            g = float(seed) * np.asarray(g, dtype=np.float64).reshape(leaf.shape)
        result[name] = g
    return result


def value_and_grad(f, params, inputs=None):
    value, tape = eval_with_tape(f, params, inputs)
    return value, backward(tape, 1.0)


def grad(f, params, inputs=None):
    return value_and_grad(f, params, inputs)[1]


def ravel(tensors):
    """Concatenate a name->array mapping into one flat vector (mapping order)."""
    if not tensors:
        return np.zeros(0)
    return np.concatenate([np.ravel(np.asarray(v, dtype=np.float64)) for v in tensors.values()])


def unravel(vec, like):
    """Inverse of :func:`ravel`, using the shapes and order of ``like``."""
    vec = np.asarray(vec, dtype=np.float64)
    total = sum(int(np.size(v)) for v in like.values())
    if vec.shape != (total,):
        raise DimensionError(f"flat vector has shape {vec.shape}, expected ({total},)")
    out, pos = {}, 0
    for name, v in like.items():
        shape = np.shape(v)
        k = int(np.prod(shape)) if shape else 1
        out[name] = vec[pos : pos + k].reshape(shape)
        pos += k
    return out


def hvp(f, params, inputs, v):
    """Exact Hessian-vector product of ``f`` at ``params`` along ``v``.

    ``v`` is either a flat vector (returned flat) or a mapping shaped like
    ``params`` (returned as a mapping).
    """
    flat = not isinstance(v, Mapping)
    vd = unravel(v, params) if flat else {k: np.asarray(v[k], dtype=np.float64) for k in params}
    for k in params:
        if np.shape(vd[k]) != np.shape(params[k]):
            raise DimensionError(f"direction for {k!r} has shape {np.shape(vd[k])}, expected {np.shape(params[k])}")
    _, tape = eval_with_tape(f, params, inputs)
    grads = backward(tape, 1.0, create_graph=True)
    dot = None
    for name, g in grads.items():
        term = reduce_sum(mul(g, vd[name]))
        dot = term if dot is None else add(dot, term)
    result = backward(tape, 1.0, output=dot)
    return ravel(result) if flat else result
