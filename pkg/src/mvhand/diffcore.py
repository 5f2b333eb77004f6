"""Reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Node` holds a value, the op that produced it, its parents and a
backward rule. Ops are plain functions (``matmul``, ``add``, ``softmax``...)
that build nodes eagerly, so "forward" happens at construction time and
:func:`backward` walks the recorded graph in reverse topological order.

There is no implicit broadcasting. Binary elementwise ops require equal
shapes; use :func:`broadcast_repeat` to expand explicitly.
"""
import json

import numpy as np

from . import kernels


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class Node:
    __slots__ = ("value", "op", "parents", "grad", "requires_grad", "_backward", "name")

    def __init__(self, value, op="leaf", parents=(), backward=None, requires_grad=None, name=None):
        self.value = value
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # operator sugar; all of it routes through the op functions below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, name=None):
    """Leaf node from external data. Rejects NaN/Inf."""
    arr = np.array(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor data contains NaN or Inf")
    return Node(arr, requires_grad=requires_grad, name=name)


def constant(data):
    """Non-trainable leaf; no finiteness check (used for masks holding -1e30)."""
    return Node(np.asarray(data, dtype=np.float64), op="const", requires_grad=False)


def as_node(x):
    return x if isinstance(x, Node) else constant(x)


def _make(value, op, parents, backward):
    out = Node(value, op, parents)
    if out.requires_grad:
        out._backward = backward
    return out


def _acc(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + g


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------- elementwise


def add(a, b):
    a, b = as_node(a), as_node(b)
    _same_shape("add", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, g)

    return _make(a.value + b.value, "add", (a, b), bw)


def add_n(nodes):
    out = nodes[0]
    for n in nodes[1:]:
        out = add(out, n)
    return out


def sub(a, b):
    a, b = as_node(a), as_node(b)
    _same_shape("sub", a, b)

    def bw(g):
        _acc(a, g)
        _acc(b, -g)

    return _make(a.value - b.value, "sub", (a, b), bw)


def mul(a, b):
    a, b = as_node(a), as_node(b)
    _same_shape("mul", a, b)

    def bw(g):
        _acc(a, g * b.value)
        _acc(b, g * a.value)

    return _make(a.value * b.value, "mul", (a, b), bw)


def div(a, b):
    a, b = as_node(a), as_node(b)
    _same_shape("div", a, b)
    q = a.value / b.value

    def bw(g):
        _acc(a, g / b.value)
        _acc(b, -g * q / b.value)

    return _make(q, "div", (a, b), bw)


def scale(a, c):
    c = float(c)

    def bw(g):
        _acc(a, g * c)

    return _make(a.value * c, "scale", (a,), bw)


def shift(a, c):
    """Add a Python scalar."""

    def bw(g):
        _acc(a, g)

    return _make(a.value + float(c), "shift", (a,), bw)


def leaky_relu(a, slope=0.01):
    pos = a.value > 0
    factor = np.where(pos, 1.0, slope)

    def bw(g):
        _acc(a, g * factor)

    return _make(a.value * factor, "leaky_relu", (a,), bw)


def exp(a):
    v = np.exp(a.value)

    def bw(g):
        _acc(a, g * v)

    return _make(v, "exp", (a,), bw)


def log(a):
    def bw(g):
        _acc(a, g / a.value)

    return _make(np.log(a.value), "log", (a,), bw)


def sin(a):
    def bw(g):
        _acc(a, g * np.cos(a.value))

    return _make(np.sin(a.value), "sin", (a,), bw)


def cos(a):
    def bw(g):
        _acc(a, -g * np.sin(a.value))

    return _make(np.cos(a.value), "cos", (a,), bw)


def sqrt(a):
    v = np.sqrt(a.value)

    def bw(g):
        _acc(a, g * 0.5 / v)

    return _make(v, "sqrt", (a,), bw)


def square(a):
    def bw(g):
        _acc(a, 2.0 * g * a.value)

    return _make(a.value * a.value, "square", (a,), bw)


def abs_(a):
    """|x| with subgradient 0 at 0."""
    sgn = np.sign(a.value)

    def bw(g):
        _acc(a, g * sgn)

    return _make(np.abs(a.value), "abs", (a,), bw)


def softplus(a):
    x = a.value
    v = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))

    def bw(g):
        _acc(a, g * sig)

    return _make(v, "softplus", (a,), bw)


def clip(a, lo, hi):
    """Clamp; gradient passes only where lo < x < hi."""
    inside = (a.value > lo) & (a.value < hi)

    def bw(g):
        _acc(a, g * inside)

    return _make(np.clip(a.value, lo, hi), "clip", (a,), bw)


def stop_gradient(a):
    return Node(a.value, op="stop_gradient", requires_grad=False)


# --------------------------------------------------------------- linear algebra


def matmul(a, b):
    """Matrix product over the last two axes; leading axes must match exactly."""
    a, b = as_node(a), as_node(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] \
            or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shape mismatch {a.shape} vs {b.shape}")

    def bw(g):
        if a.requires_grad:
            _acc(a, g @ np.swapaxes(b.value, -1, -2))
        if b.requires_grad:
            _acc(b, np.swapaxes(a.value, -1, -2) @ g)

    return _make(a.value @ b.value, "matmul", (a, b), bw)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bw(g):
        _acc(a, np.transpose(g, inv))

    return _make(np.transpose(a.value, axes), "transpose", (a,), bw)


def swap_last(a):
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a, shape):
    a = as_node(a)
    shape = tuple(shape)
    try:
        v = a.value.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}") from None
    old = a.shape

    def bw(g):
        _acc(a, g.reshape(old))

    return _make(v, "reshape", (a,), bw)


def concat(nodes, axis=-1):
    nodes = [as_node(n) for n in nodes]
    ref = nodes[0].shape
    ax = axis % len(ref)
    for n in nodes[1:]:
        if len(n.shape) != len(ref) or any(n.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape mismatch {ref} vs {n.shape}")
    sizes = np.cumsum([n.shape[ax] for n in nodes])[:-1]

    def bw(g):
        for n, piece in zip(nodes, np.split(g, sizes, axis=ax)):
            _acc(n, piece)

    return _make(np.concatenate([n.value for n in nodes], axis=ax), "concat", nodes, bw)


def stack(nodes, axis=0):
    nodes = [as_node(n) for n in nodes]
    ax = axis % (nodes[0].ndim + 1)
    expanded = [reshape(n, n.shape[:ax] + (1,) + n.shape[ax:]) for n in nodes]
    return concat(expanded, axis=ax)


def take(a, index, axis=0):
    """Gather entries along ``axis`` (gather-rows generalised to any axis)."""
    index = np.asarray(index, dtype=np.int64)
    ax = axis % a.ndim

    def bw(g):
        full = np.zeros_like(a.value)
        moved = np.moveaxis(full, ax, 0)
        np.add.at(moved, index, np.moveaxis(g, ax, 0))
        _acc(a, full)

    if index.ndim != 1:
        raise ShapeError("take: index must be 1-D")
    return _make(np.take(a.value, index, axis=ax), "take", (a,), bw)


def gather_rows(a, index):
    return take(a, index, axis=0)


def broadcast_repeat(a, shape):
    """Explicit broadcast of ``a`` to ``shape`` (numpy broadcasting rules)."""
    shape = tuple(shape)
    try:
        v = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeError(f"broadcast_repeat: cannot broadcast {a.shape} to {shape}") from None
    src = a.shape
    lead = len(shape) - len(src)
    red = tuple(range(lead)) + tuple(lead + i for i, s in enumerate(src) if s == 1 and shape[lead + i] != 1)

    def bw(g):
        r = g.sum(axis=red, keepdims=True) if red else g
        _acc(a, r.reshape(src))

    return _make(np.array(v), "broadcast_repeat", (a,), bw)


# ---------------------------------------------------------------- reductions


def reduce_sum(a, axis=None, keepdims=False):
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(a, np.broadcast_to(g, src))

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), "reduce_sum", (a,), bw)


def reduce_mean(a, axis=None, keepdims=False):
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis, keepdims), 1.0 / n)


def max_axis(a, axis):
    """Max along ``axis``; gradient to the argmax, ties to the lowest index."""
    ax = axis % a.ndim
    idx = np.argmax(a.value, axis=ax)
    v = np.take_along_axis(a.value, np.expand_dims(idx, ax), axis=ax).squeeze(ax)

    def bw(g):
        full = np.zeros_like(a.value)
        np.put_along_axis(full, np.expand_dims(idx, ax), np.expand_dims(g, ax), axis=ax)
        _acc(a, full)

    return _make(v, "max_axis", (a,), bw)


def softmax(a, axis=-1):
    x = a.value - np.max(a.value, axis=axis, keepdims=True)
    e = np.exp(x)
    s = e / np.sum(e, axis=axis, keepdims=True)

    def bw(g):
        _acc(a, s * (g - np.sum(g * s, axis=axis, keepdims=True)))

    return _make(s, "softmax", (a,), bw)


def l1_distance(a, b):
    """Sum of |a - b|; subgradient 0 where equal."""
    return reduce_sum(abs_(sub(a, b)))


def l2_squared(a, b=None):
    d = a if b is None else sub(a, b)
    return reduce_sum(square(d))


# ----------------------------------------------------------------- sampling


def bilinear_sample(fmap, coords):
    """Sample (h, w, c) or (B, h, w, c) maps at (m, 2) / (B, m, 2) pixel coords.

    Coordinates are (x, y) and are clamped to the map border. The coordinate
    gradient is zero along clamped axes.
    """
    fmap, coords = as_node(fmap), as_node(coords)
    single = fmap.ndim == 3
    fv = fmap.value[None] if single else fmap.value
    cv = coords.value[None] if single else coords.value
    if fv.ndim != 4 or cv.ndim != 3 or cv.shape[-1] != 2 or cv.shape[0] != fv.shape[0]:
        raise ShapeError(f"bilinear_sample: shape mismatch {fmap.shape} vs {coords.shape}")
    out = kernels.bilinear_forward(fv, cv)

    def bw(g):
        gf, gc = kernels.bilinear_backward(fv, cv, g[None] if single else g)
        if single:
            gf, gc = gf[0], gc[0]
        _acc(fmap, gf)
        _acc(coords, gc)

    return _make(out[0] if single else out, "bilinear_sample", (fmap, coords), bw)


# -------------------------------------------------- rotation helper functions
# Rodrigues coefficients as functions of u = |r|^2:
#   A(u) = sin(t)/t,  B(u) = (1 - cos t)/t^2,  t = sqrt(u)

_TAYLOR_VALUE = 1e-16  # |r| < 1e-8
_TAYLOR_DERIV = 1e-4   # |r| < 1e-2; the closed-form derivative cancels badly below this


def _rod_a(u):
    t = np.sqrt(np.maximum(u, 0.0))
    small = u < _TAYLOR_VALUE
    ts = np.where(small, 1.0, t)
    return np.where(small, 1.0 - u / 6.0, np.sin(ts) / ts)


def _rod_b(u):
    t = np.sqrt(np.maximum(u, 0.0))
    small = u < _TAYLOR_VALUE
    ts = np.where(small, 1.0, t)
    return np.where(small, 0.5 - u / 24.0, 2.0 * (np.sin(0.5 * ts) / ts) ** 2)


def _rod_da(u):
    small = u < _TAYLOR_DERIV
    us = np.where(small, 1.0, u)
    t = np.sqrt(us)
    closed = (np.cos(t) - np.sin(t) / t) / (2.0 * us)
    series = -1.0 / 6.0 + u / 60.0 - u * u / 1680.0
    return np.where(small, series, closed)


def _rod_db(u):
    small = u < _TAYLOR_DERIV
    us = np.where(small, 1.0, u)
    t = np.sqrt(us)
    closed = (t * np.sin(t) - 2.0 * (1.0 - np.cos(t))) / (2.0 * us * us)
    series = -1.0 / 24.0 + u / 360.0 - u * u / 13440.0
    return np.where(small, series, closed)


def rodrigues_a(u):
    def bw(g):
        _acc(u, g * _rod_da(u.value))

    return _make(_rod_a(u.value), "rodrigues_a", (u,), bw)


def rodrigues_b(u):
    def bw(g):
        _acc(u, g * _rod_db(u.value))

    return _make(_rod_b(u.value), "rodrigues_b", (u,), bw)


# ------------------------------------------------------------------ backward


def topological_order(root):
    """Nodes reachable from ``root`` that require grad, parents before children."""
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
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Accumulate d(root)/d(node) into ``node.grad`` for every node in the graph.

    Leaf grads are accumulated (not reset) so callers zero them between steps.
    """
    if root.value.size != 1:
        raise ShapeError(f"backward: root must be scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = topological_order(root)
    for n in order:
        if n._backward is not None:
            n.grad = None
    root.grad = np.ones_like(root.value)
    for n in reversed(order):
        if n._backward is not None and n.grad is not None:
            n._backward(n.grad)


def forward(root):
    """Root value; ops evaluate eagerly so this only returns the cached array."""
    return root.value


def zero_grad(leaves):
    for leaf in leaves:
        leaf.grad = None


def graph_to_json(root):
    """JSON adjacency list: one entry per node with id, op tag, shape and parent ids."""
    ids, nodes, stack = {}, [], [root]
    while stack:
        n = stack.pop()
        if id(n) in ids:
            continue
        ids[id(n)] = len(ids)
        nodes.append(n)
        stack.extend(n.parents)
    out = [{"id": ids[id(n)], "op": n.op, "shape": list(n.shape),
            "parents": [ids[id(p)] for p in n.parents]} for n in nodes]
    return json.dumps(out)


# ----------------------------------------------------------- gradient checks


def numeric_gradient(fn, arrays, wrt, h=1e-5):
    """Central finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[wrt]``."""
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    x = base[wrt]
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(fn(*base))
        flat[i] = old - h
        fm = float(fn(*base))
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|_inf, |n|_inf, floor)."""
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = max(np.max(np.abs(analytic), initial=0.0), np.max(np.abs(numeric), initial=0.0), floor)
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / denom)


def check_gradients(build, arrays, h=1e-5):
    """Compare autodiff and finite differences for ``build(*nodes) -> scalar node``.

    Returns the worst relative error over all inputs.
    """
    nodes = [tensor(a, requires_grad=True) for a in arrays]
    out = build(*nodes)
    backward(out)
    worst = 0.0

    def fn(*xs):
        return build(*[constant(x) for x in xs]).value

    for i, n in enumerate(nodes):
        num = numeric_gradient(fn, arrays, i, h)
        ana = n.grad if n.grad is not None else np.zeros_like(n.value)
        worst = max(worst, relative_error(ana, num))
    return worst
