"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every differentiable kernel in the package (convolution, attention, layer
norm, the structure-tensor map used by the loss) is written against
:class:`Tensor`, so the same code path serves inference and training.
Gradients are accumulated in float64.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf


class Tensor:
    """An array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Backpropagate from this node; a scalar output gets seed gradient 1."""
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def __pow__(self, p: float):
        return power(self, p)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    live = tuple(p for p in parents if p.requires_grad)
    if live:
        out.requires_grad = True
        out._parents = live
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), backward)


def power(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def backward(g):
        a._accum(g * p * a.data ** (p - 1))

    return _node(out, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: a._accum(g * out))


def log1p(a: Tensor) -> Tensor:
    return _node(np.log1p(a.data), (a,), lambda g: a._accum(g / (1.0 + a.data)))


def sqrt(a: Tensor) -> Tensor:
    """Square root; the derivative at exactly zero is taken as zero."""
    out = np.sqrt(a.data)

    def backward(g):
        safe = np.where(out > 0, out, 1.0)
        a._accum(np.where(out > 0, g / (2.0 * safe), 0.0))

    return _node(out, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    return _node(np.abs(a.data), (a,), lambda g: a._accum(g * np.sign(a.data)))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), (a,), lambda g: a._accum(g * inside))


def leaky_relu(a: Tensor, slope: float = 0.1) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _node(a.data * scale, (a,), lambda g: a._accum(g * scale))


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _node(x * cdf, (a,), lambda g: a._accum(g * (cdf + x * pdf)))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, (a,), lambda g: a._accum(g * out * (1.0 - out)))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (a,), backward)


# reductions

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _node(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape) / n)

    return _node(out, (a,), backward)


def quantile(a: Tensor, q: float) -> Tensor:
    """Linear-interpolation quantile of all elements (numpy's default method)."""
    flat = a.data.ravel()
    order = np.argsort(flat, kind="stable")
    pos = q * (flat.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, flat.size - 1)
    frac = pos - lo
    v_lo, v_hi = flat[order[lo]], flat[order[hi]]
    out = np.asarray(v_lo + frac * (v_hi - v_lo))

    def backward(g):
        gf = np.zeros(flat.size)
        gf[order[lo]] += g * (1.0 - frac)
        gf[order[hi]] += g * frac
        a._accum(gf.reshape(a.shape))

    return _node(out, (a,), backward)


# linear algebra and shape manipulation

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    # permuted views can defeat BLAS, so operands are made contiguous first
    ad, bd = np.ascontiguousarray(a.data), np.ascontiguousarray(b.data)

    def backward(g):
        g = np.ascontiguousarray(g)
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape))

    return _node(ad @ bd, (a, b), backward)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))


def getitem(a: Tensor, index) -> Tensor:
    def backward(g):
        full = np.zeros(a.shape)
        if _has_array_index(index):
            np.add.at(full, index, g)
        else:
            full[index] += g
        a._accum(full)

    return _node(a.data[index], (a,), backward)


def _has_array_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def concat(items: Iterable, axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    bounds = np.cumsum([0] + sizes)
    out = np.concatenate([t.data for t in items], axis=axis)

    def backward(g):
        for t, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return _node(out, items, backward)


def roll(a: Tensor, shift, axis) -> Tensor:
    neg = tuple(-s for s in shift) if isinstance(shift, tuple) else -shift
    return _node(np.roll(a.data, shift, axis), (a,), lambda g: a._accum(np.roll(g, neg, axis)))


def pad_edge(a: Tensor, widths) -> Tensor:
    """Replicate padding; ``widths`` follows :func:`numpy.pad`."""
    out = np.pad(a.data, widths, mode="edge")

    def backward(g):
        # fold padded borders back onto the edge samples, axis by axis
        for ax, (before, after) in enumerate(widths):
            if before == 0 and after == 0:
                continue
            n = g.shape[ax] - before - after
            body = np.take(g, np.arange(before, before + n), axis=ax).copy()
            head = np.take(g, np.arange(0, before), axis=ax).sum(axis=ax)
            tail = np.take(g, np.arange(before + n, g.shape[ax]), axis=ax).sum(axis=ax)
            first = [slice(None)] * g.ndim
            first[ax] = 0
            last = [slice(None)] * g.ndim
            last[ax] = n - 1
            body[tuple(first)] += head
            body[tuple(last)] += tail
            g = body
        a._accum(g)

    return _node(out, (a,), backward)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, dilation: int = 1) -> Tensor:
    """3x3 'same' convolution (cross-correlation) with zero padding.

    ``x`` is ``(C_in, H, W)``, ``w`` is ``(C_out, C_in, k, k)`` with odd
    ``k``. Accumulation runs tap by tap in a fixed order so repeated calls
    are bit-identical.
    """
    x, w = as_tensor(x), as_tensor(w)
    cin, h, wd = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise ValueError(f"conv2d: kernel expects {wcin} input channels, got {cin}")
    if k != k2 or k % 2 == 0:
        raise ValueError("conv2d: kernel must be square with odd size")
    r = (k // 2) * dilation
    xp = np.pad(x.data, ((0, 0), (r, r), (r, r)))
    taps = [(i, j) for i in range(k) for j in range(k)]
    # tap-major contiguous copy; strided kernel slices fall off the BLAS path
    wt = np.ascontiguousarray(w.data.transpose(2, 3, 0, 1))
    out = np.zeros((cout, h * wd))
    for i, j in taps:
        patch = xp[:, i * dilation:i * dilation + h, j * dilation:j * dilation + wd]
        out += wt[i, j] @ patch.reshape(cin, -1)
    if b is not None:
        b = as_tensor(b)
        out += b.data[:, None]
    out = out.reshape(cout, h, wd)
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        g2 = np.ascontiguousarray(g).reshape(cout, -1)
        if w.requires_grad:
            gw = np.zeros((k, k, cout, cin))
            for i, j in taps:
                patch = xp[:, i * dilation:i * dilation + h, j * dilation:j * dilation + wd]
                gw[i, j] = g2 @ patch.reshape(cin, -1).T
            w._accum(gw.transpose(2, 3, 0, 1))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i, j in taps:
                gxp[:, i * dilation:i * dilation + h, j * dilation:j * dilation + wd] += (
                    wt[i, j].T @ g2
                ).reshape(cin, h, wd)
            x._accum(gxp[:, r:r + h, r:r + wd])
        if b is not None and b.requires_grad:
            b._accum(g2.sum(axis=1))

    return _node(out, parents, backward)
