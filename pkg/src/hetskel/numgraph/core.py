"""Dense f64 arrays with reverse-mode differentiation.

Every primitive builds a :class:`Node` holding its forward value and a closure
that pushes the output gradient back to its parents.  ``backward`` walks the
recorded graph once in reverse topological order.
"""
from __future__ import annotations

import numpy as np


class NumGraphError(ValueError):
    """Shape mismatch or non-finite value inside the graph."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf", requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"

    # operator sugar
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
        if isinstance(other, Node):
            raise NumGraphError("division by a Node is not a primitive")
        return mul(self, 1.0 / float(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return slice_(self, idx)

    @property
    def T(self):
        return transpose(self)


def const(x) -> Node:
    return Node(np.asarray(x, dtype=np.float64))


def param(x, name=None) -> Node:
    return Node(np.array(x, dtype=np.float64), requires_grad=True, name=name)


def as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _check_finite(value, op):
    # a finite sum implies finite entries; only overflowing sums need the full scan
    if not np.isfinite(np.add.reduce(value, axis=None)) and not np.isfinite(value).all():
        raise NumGraphError(f"non-finite result in {op}")


def _make(value, parents, backward_fn, op) -> Node:
    _check_finite(value, op)
    rg = any(p.requires_grad for p in parents)
    return Node(value, parents, backward_fn if rg else None, op, rg)


def _accum(node: Node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True).reshape(node.value.shape)
    else:
        node.grad += g


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise NumGraphError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# elementwise arithmetic

def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a.value, b.value, "add")

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    return _make(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a.value, b.value, "sub")

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a, b) -> Node:
    if not isinstance(b, Node) and np.ndim(b) == 0:
        a = as_node(a)
        s = float(b)

        def bw_scalar(g):
            _accum(a, g * s)

        return _make(a.value * s, (a,), bw_scalar, "scale")
    a, b = as_node(a), as_node(b)
    _broadcast_shape(a.value, b.value, "mul")

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.value, b.value.shape))

    return _make(a.value * b.value, (a, b), bw, "mul")


def add_scalar(a, s: float) -> Node:
    a = as_node(a)

    def bw(g):
        _accum(a, g)

    return _make(a.value + float(s), (a,), bw, "add_scalar")


def exp(a) -> Node:
    a = as_node(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.value)

    def bw(g):
        _accum(a, g * out)

    return _make(out, (a,), bw, "exp")


def log(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= 0):
        raise NumGraphError("log of non-positive value")
    out = np.log(a.value)

    def bw(g):
        _accum(a, g / a.value)

    return _make(out, (a,), bw, "log")


def log1p(a) -> Node:
    a = as_node(a)
    if np.any(a.value <= -1):
        raise NumGraphError("log1p of value <= -1")
    out = np.log1p(a.value)

    def bw(g):
        _accum(a, g / (1.0 + a.value))

    return _make(out, (a,), bw, "log1p")


def relu(a) -> Node:
    a = as_node(a)
    on = a.value > 0

    def bw(g):
        _accum(a, g * on)

    return _make(np.where(on, a.value, 0.0), (a,), bw, "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Node:
    """Tanh-approximated GELU."""
    a = as_node(a)
    x = a.value
    x2 = x * x
    th = np.tanh(_GELU_C * x * (1.0 + 0.044715 * x2))
    out = 0.5 * x * (1.0 + th)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        d = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
        _accum(a, g * d)

    return _make(out, (a,), bw, "gelu")


# shape manipulation

def matmul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise NumGraphError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    av, bv = a.value, b.value
    if bv.ndim == 2:
        # fold leading axes into one gemm
        out = (av.reshape(-1, av.shape[-1]) @ bv).reshape(av.shape[:-1] + (bv.shape[1],))
    else:
        out = np.matmul(av, bv)

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), av.shape))
        if b.requires_grad:
            if bv.ndim == 2:
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), bv.shape)
            _accum(b, gb)

    return _make(out, (a, b), bw, "matmul")


def transpose(a, axes=None) -> Node:
    a = as_node(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    axes = tuple(axes)
    inv = np.argsort(axes)

    def bw(g):
        _accum(a, np.transpose(g, inv))

    return _make(np.transpose(a.value, axes), (a,), bw, "transpose")


def reshape(a, shape) -> Node:
    a = as_node(a)
    try:
        out = a.value.reshape(shape)
    except ValueError:
        raise NumGraphError(f"reshape: cannot view {a.shape} as {shape}") from None

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    return _make(out, (a,), bw, "reshape")


def concat(nodes, axis=-1) -> Node:
    nodes = [as_node(n) for n in nodes]
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError as exc:
        raise NumGraphError(f"concat: {exc}") from None
    sizes = [n.value.shape[axis] for n in nodes]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        for n, piece in zip(nodes, np.split(g, cuts, axis=axis)):
            _accum(n, piece)

    return _make(out, tuple(nodes), bw, "concat")


def stack(nodes, axis=0) -> Node:
    nodes = [as_node(n) for n in nodes]
    expanded = [reshape(n, n.shape[:axis % (n.ndim + 1)] + (1,) + n.shape[axis % (n.ndim + 1):]) for n in nodes]
    return concat(expanded, axis=axis)


def slice_(a, idx) -> Node:
    """Basic (view) indexing: ints, slices, Ellipsis, None."""
    a = as_node(a)
    out = a.value[idx]

    def bw(g):
        full = np.zeros_like(a.value)
        full[idx] = g
        _accum(a, full)

    return _make(np.array(out, copy=True), (a,), bw, "slice")


def take(a, indices, axis) -> Node:
    """Gather along ``axis``; repeated indices accumulate in the backward pass."""
    a = as_node(a)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(a.value, indices, axis=axis)
    ax = axis % a.ndim

    def bw(g):
        full = np.zeros_like(a.value)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, ax, 0) if indices.ndim == 1 else np.moveaxis(g, list(range(ax, ax + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        _accum(a, full)

    return _make(out, (a,), bw, "take")


# reductions

def sum_(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    out = np.sum(a.value, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.value.shape))

    return _make(np.asarray(out), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False) -> Node:
    a = as_node(a)
    count = a.value.size if axis is None else np.prod([a.value.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / float(count))


def max_pool(a, axis) -> Node:
    """Max over ``axis``; the gradient goes to the first maximal entry only."""
    a = as_node(a)
    ax = axis % a.ndim
    if a.value.shape[ax] == 0:
        raise NumGraphError("max_pool over an empty axis")
    arg = np.argmax(a.value, axis=ax)
    out = np.take_along_axis(a.value, np.expand_dims(arg, ax), axis=ax).squeeze(ax)

    def bw(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, np.expand_dims(arg, ax), np.expand_dims(g, ax), axis=ax)
        _accum(a, full)

    return _make(out, (a,), bw, "max_pool")


# normalisations

def softmax(a) -> Node:
    a = as_node(a)
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _accum(a, out * (g - np.sum(g * out, axis=-1, keepdims=True)))

    return _make(out, (a,), bw, "softmax")


def layer_norm(a, gain, bias, eps=1e-5) -> Node:
    if eps <= 0:
        raise NumGraphError("layer_norm epsilon must be positive")
    a, gain, bias = as_node(a), as_node(gain), as_node(bias)
    x = a.value
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.value + bias.value

    def bw(g):
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * xhat, gain.value.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.value.shape))
        if a.requires_grad:
            gx = g * gain.value
            n = x.shape[-1]
            dx = inv / n * (n * gx - gx.sum(axis=-1, keepdims=True) - xhat * np.sum(gx * xhat, axis=-1, keepdims=True))
            _accum(a, dx)

    return _make(out, (a, gain, bias), bw, "layer_norm")


def l2_normalize(a) -> Node:
    a = as_node(a)
    norm = np.sqrt(np.sum(a.value * a.value, axis=-1, keepdims=True))
    if np.any(norm == 0):
        raise NumGraphError("l2_normalize of a zero vector")
    out = a.value / norm

    def bw(g):
        _accum(a, (g - out * np.sum(g * out, axis=-1, keepdims=True)) / norm)

    return _make(out, (a,), bw, "l2_normalize")


# backward pass

def _topo_order(root: Node):
    order, seen = [], set()
    stack = [(root, False)]
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


def backward(root: Node, grad=None):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if grad is None:
        if root.value.size != 1:
            raise NumGraphError("backward without an explicit gradient needs a scalar root")
        grad = np.ones_like(root.value)
    if not root.requires_grad:
        return
    _accum(root, grad)
    for node in reversed(_topo_order(root)):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
            # free interior gradients; leaves keep theirs
            if node.parents:
                node.grad = None


def group_max(a, groups, n_groups) -> Node:
    """Max-pool ``a`` [B, N, D] within index groups along axis 1 -> [B, G, D].

    Ties route the gradient to the lowest index in the group.
    """
    from .. import kernels

    a = as_node(a)
    groups = np.asarray(groups, dtype=np.int64)
    if a.ndim != 3 or groups.shape != (a.shape[1],):
        raise NumGraphError(f"group_max: input {a.shape} vs groups {groups.shape}")
    if np.bincount(groups, minlength=n_groups).min() == 0 or groups.max() >= n_groups:
        raise NumGraphError("group_max: every group needs at least one member")
    vals, idx = kernels.group_max(a.value, groups, n_groups)
    n = a.shape[1]

    def bw(g):
        _accum(a, kernels.group_max_backward(g, idx, n))

    return _make(vals, (a,), bw, "group_max")
