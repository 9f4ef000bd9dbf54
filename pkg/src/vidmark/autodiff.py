"""Minimal reverse-mode autodiff over numpy arrays.

Just enough machinery for the embed/extract networks: elementwise ops,
reductions, matmul, 3D convolution, trilinear resize and bilinear warps
(the last three dispatch to the kernels backend). Graphs are built only
while grad mode is on and at least one operand requires grad; everything
else degrades to plain numpy with no bookkeeping.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    """A numpy array plus the tape entry that produced it."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._vjps: tuple = ()

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        # Post-order DFS; nodes are marked seen when first expanded (not
        # when pushed) so diamonds (residual adds) topo-sort correctly.
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(order):
            g = node.grad
            if g is None:
                continue
            for p, vjp in zip(node._parents, node._vjps):
                contrib = vjp(g)
                if p.grad is None:
                    p.grad = contrib
                else:
                    p.grad = p.grad + contrib
            if node._parents:
                node.grad = None  # free intermediates, keep leaves

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

    def __truediv__(self, other):
        return div(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if len(axes) > 1 else axes[0])


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, links) -> Tensor:
    """links: iterable of (parent Tensor, vjp). Untracked parents are dropped."""
    out = Tensor(data)
    if _grad_enabled:
        tracked = [(p, f) for p, f in links if p.requires_grad]
        if tracked:
            out.requires_grad = True
            out._parents = tuple(p for p, _ in tracked)
            out._vjps = tuple(f for _, f in tracked)
    return out


def add(a, b):
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _node(a.data + b, [(a, lambda g: g)])
    if not isinstance(a, Tensor):
        return add(b, a)
    data = a.data + b.data
    return _node(data, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                        (b, lambda g: _unbroadcast(g, b.data.shape))])


def sub(a, b):
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _node(a.data - b, [(a, lambda g: g)])
    if not isinstance(a, Tensor):
        bb = b
        return _node(a - bb.data, [(bb, lambda g: -g)])
    return _node(a.data - b.data, [(a, lambda g: _unbroadcast(g, a.data.shape)),
                                   (b, lambda g: _unbroadcast(-g, b.data.shape))])


def mul(a, b):
    if not isinstance(b, Tensor):
        a = as_tensor(a)
        return _node(a.data * b, [(a, lambda g: _unbroadcast(g * b, a.data.shape))])
    if not isinstance(a, Tensor):
        return mul(b, a)
    data = a.data * b.data
    return _node(data, [(a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
                        (b, lambda g: _unbroadcast(g * a.data, b.data.shape))])


def div(a, b):
    if not isinstance(b, Tensor):
        return mul(a, 1.0 / b)
    a = as_tensor(a)
    data = a.data / b.data
    return _node(data, [(a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
                        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data),
                                                   b.data.shape))])


def power(a, p: float):
    a = as_tensor(a)
    data = a.data ** p
    return _node(data, [(a, lambda g: g * p * a.data ** (p - 1))])


def matmul(a: Tensor, b: Tensor):
    data = a.data @ b.data
    return _node(data, [(a, lambda g: g @ b.data.T),
                        (b, lambda g: a.data.T @ g)])


def relu(a: Tensor):
    mask = a.data > 0
    return _node(a.data * mask, [(a, lambda g: g * mask)])


def sigmoid(a: Tensor):
    x = a.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    return _node(s, [(a, lambda g: g * s * (1.0 - s))])


def sqrt(a: Tensor):
    s = np.sqrt(a.data)
    return _node(s, [(a, lambda g: g * 0.5 / s)])


def sin(a: Tensor):
    return _node(np.sin(a.data), [(a, lambda g: g * np.cos(a.data))])


def clip(a: Tensor, lo: float, hi: float):
    mask = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), [(a, lambda g: g * mask)])


def tsum(a: Tensor, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.full(a.data.shape, g, dtype=a.data.dtype)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return _node(data, [(a, vjp)])


def tmean(a: Tensor, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        ax = (axis,) if isinstance(axis, int) else axis
        n = 1
        for i in ax:
            n *= a.data.shape[i]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


def reshape(a: Tensor, shape):
    orig = a.data.shape
    return _node(a.data.reshape(shape), [(a, lambda g: g.reshape(orig))])


def transpose(a: Tensor, axes):
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _node(np.ascontiguousarray(a.data.transpose(axes)),
                 [(a, lambda g: g.transpose(inv))])


def concat(tensors, axis: int):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    links = []
    for i, t in enumerate(tensors):
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g, lo=lo, hi=hi):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return np.ascontiguousarray(g[tuple(sl)])

        links.append((t, vjp))
    return _node(data, links)


def getitem(a: Tensor, key):
    data = a.data[key]

    def vjp(g):
        gz = np.zeros_like(a.data)
        gz[key] = g
        return gz

    return _node(np.ascontiguousarray(data), [(a, vjp)])


def take_frames(a: Tensor, idx):
    """Select frames along the time axis (axis 2) by integer indices."""
    idx = np.asarray(idx, dtype=np.int64)
    data = np.ascontiguousarray(a.data[:, :, idx])

    def vjp(g):
        gz = np.zeros_like(a.data)
        np.add.at(gz, (slice(None), slice(None), idx), g)
        return gz

    return _node(data, [(a, vjp)])


def conv3d(x: Tensor, w: Tensor, stride=(1, 1, 1), padding=(0, 0, 0)):
    pt, ph, pw = padding
    if pt or ph or pw:
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    else:
        xp = x.data
    data = kernels.conv3d_forward(xp, w.data, stride)
    xp_shape = xp.shape

    def vjp_x(g):
        gxp = kernels.conv3d_backward_input(g, w.data, xp_shape, stride)
        if pt or ph or pw:
            T, H, W = x.data.shape[2:]
            return np.ascontiguousarray(gxp[:, :, pt:pt + T, ph:ph + H, pw:pw + W])
        return gxp

    def vjp_w(g):
        return kernels.conv3d_backward_weight(g, xp, w.data.shape, stride)

    return _node(data, [(x, vjp_x), (w, vjp_w)])


def resize3d(x: Tensor, out_sizes):
    """Trilinear resize of the (T, H, W) dims, half-pixel convention."""
    in_sizes = x.data.shape[2:]
    if tuple(in_sizes) == tuple(out_sizes):
        return _node(x.data.copy(), [(x, lambda g: g)])
    tables = kernels.resize_tables(in_sizes, out_sizes)
    data = kernels.resize3d_forward(x.data, out_sizes, tables)
    in_shape = x.data.shape

    def vjp(g):
        return kernels.resize3d_backward(g, in_shape, tables)

    return _node(data, [(x, vjp)])


def warp_bilinear(x: Tensor, my: np.ndarray, mx: np.ndarray):
    """Spatial bilinear warp shared across frames; zero fill outside."""
    data = kernels.warp_forward(x.data, my, mx)
    return _node(data, [(x, lambda g: kernels.warp_backward(g, my, mx))])


def straight_through(x: Tensor, transformed: np.ndarray):
    """Forward uses `transformed`; gradient passes through unchanged."""
    return _node(transformed, [(x, lambda g: g)])


def linear_selfadjoint(x: Tensor, fn):
    """Apply a self-adjoint linear map (e.g. symmetric-kernel blur with
    zero padding); the backward pass reuses the same map."""
    return _node(fn(x.data), [(x, fn)])


def sandwich(x: Tensor, m: np.ndarray):
    """Y = M X M^T over the trailing two axes (orthonormal transforms)."""
    data = np.einsum("ij,...jk,lk->...il", m, x.data, m)
    return _node(data, [(x, lambda g: np.einsum("ji,...jk,kl->...il", m, g, m))])


def mse(a, b):
    d = sub(a, b)
    return tmean(mul(d, d))
