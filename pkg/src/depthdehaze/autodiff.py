"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` wraps an ndarray and records how it was produced; calling
``backward()`` on a scalar result accumulates gradients into every upstream
tensor created with ``requires_grad=True``.  Only the operations the networks
in this package need are implemented.  Every operation preserves the input
dtype (float32 for training, float64 for gradient checks), allocates nothing
global, and is deterministic, so whole training runs are bit-reproducible.

Subgraphs whose inputs all have ``requires_grad=False`` are not recorded at
all, which is what makes frozen-partner passes cheap.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "concat",
    "conv2d",
    "gelu",
    "layernorm",
    "matmul",
    "narrow",
    "pad_hw",
    "relu",
    "sigmoid",
    "softmax",
    "clip01",
    "upsample_nearest",
]

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))
_INV_SQRT2PI = float(1.0 / np.sqrt(2.0 * np.pi))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accum(t: "Tensor", g) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.empty_like(t.data)
        np.copyto(t.grad, g)  # handles broadcast from sum/mean backward
    else:
        t.grad += g


def _node(data: np.ndarray, parents: tuple, backward) -> "Tensor":
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


class Tensor:
    """An ndarray plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # -- graph control -------------------------------------------------
    def detach(self) -> "Tensor":
        """A view of the same data with the graph cut."""
        return Tensor(self.data, requires_grad=False)

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)
        # Iterative topological sort; graphs can be a few thousand nodes deep.
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(grad, dtype=self.data.dtype)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data + b.data

            def bw(g):
                _accum(a, _unbroadcast(g, a.data.shape))
                _accum(b, _unbroadcast(g, b.data.shape))

            return _node(data, (a, b), bw)
        a = self
        data = a.data + other

        def bw(g):
            _accum(a, g)

        return _node(data, (a,), bw)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return _node(-a.data, (a,), lambda g: _accum(a, -g))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data - b.data

            def bw(g):
                _accum(a, _unbroadcast(g, a.data.shape))
                _accum(b, _unbroadcast(-g, b.data.shape))

            return _node(data, (a, b), bw)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data * b.data

            def bw(g):
                _accum(a, _unbroadcast(g * b.data, a.data.shape))
                _accum(b, _unbroadcast(g * a.data, b.data.shape))

            return _node(data, (a, b), bw)
        a = self
        data = a.data * other

        def bw(g):
            _accum(a, g * other)

        return _node(data, (a,), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            a, b = self, other
            data = a.data / b.data

            def bw(g):
                _accum(a, _unbroadcast(g / b.data, a.data.shape))
                _accum(b, _unbroadcast(-g * data / b.data, b.data.shape))

            return _node(data, (a, b), bw)
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        a = self
        data = other / a.data

        def bw(g):
            _accum(a, -g * data / a.data)

        return _node(data, (a,), bw)

    def __pow__(self, p):
        a = self
        data = a.data ** p

        def bw(g):
            _accum(a, g * p * a.data ** (p - 1))

        return _node(data, (a,), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise ---------------------------------------------------
    def abs(self):
        a = self
        data = np.abs(a.data)

        def bw(g):
            _accum(a, g * np.sign(a.data))

        return _node(data, (a,), bw)

    def exp(self):
        a = self
        data = np.exp(a.data)

        def bw(g):
            _accum(a, g * data)

        return _node(data, (a,), bw)

    def log(self):
        a = self
        data = np.log(a.data)

        def bw(g):
            _accum(a, g / a.data)

        return _node(data, (a,), bw)

    def sqrt(self):
        a = self
        data = np.sqrt(a.data)

        def bw(g):
            _accum(a, g * 0.5 / data)

        return _node(data, (a,), bw)

    # -- reductions ----------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.sum(axis=axis, keepdims=keepdims)

        def bw(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(g, axis)
            _accum(a, gg)

        return _node(np.asarray(data), (a,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        a = self
        data = a.data.mean(axis=axis, keepdims=keepdims)
        scale = float(data.size) / float(a.data.size)

        def bw(g):
            gg = g * scale
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            _accum(a, gg)

        return _node(np.asarray(data), (a,), bw)

    # -- shape ---------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self
        data = a.data.reshape(shape)

        def bw(g):
            _accum(a, g.reshape(a.data.shape))

        return _node(data, (a,), bw)

    def transpose(self, axes):
        a = self
        data = a.data.transpose(axes)
        inv = tuple(np.argsort(axes))

        def bw(g):
            _accum(a, g.transpose(inv))

        return _node(data, (a,), bw)


def as_tensor(x, dtype=None) -> Tensor:
    """Wrap ``x`` as a constant (no-grad) tensor, optionally casting."""
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0.0)

    def bw(g):
        _accum(a, g * (a.data > 0.0))

    return _node(data, (a,), bw)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf) GELU; smooth, so central differences stay honest."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    data = (x * cdf).astype(x.dtype, copy=False)

    def bw(g):
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
        _accum(a, g * (cdf + x * pdf).astype(x.dtype, copy=False))

    return _node(data, (a,), bw)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def bw(g):
        _accum(a, g * data * (1.0 - data))

    return _node(data, (a,), bw)


def clip01(a: Tensor) -> Tensor:
    """Clamp to [0, 1]; gradient passes only where the input is in range."""
    data = np.clip(a.data, 0.0, 1.0)
    mask = (a.data >= 0.0) & (a.data <= 1.0)

    def bw(g):
        _accum(a, g * mask)

    return _node(data, (a,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(data, (a, b), bw)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _accum(a, data * (g - dot))

    return _node(data, (a,), bw)


def layernorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Layer normalization over the last axis."""
    gamma, beta = as_tensor(gamma), as_tensor(beta)
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def bw(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).sum(axis=tuple(range(g.ndim - 1))))
        if beta.requires_grad:
            _accum(beta, g.sum(axis=tuple(range(g.ndim - 1))))
        if x.requires_grad:
            gx = g * gamma.data
            m1 = gx.mean(axis=-1, keepdims=True)
            m2 = (gx * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (gx - m1 - xhat * m2))

    return _node(data, (x, gamma, beta), bw)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _node(data, tensors, bw)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    data = a.data[idx]

    def bw(g):
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accum(a, buf)

    return _node(data, (a,), bw)


def pad_hw(a: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the last two axes of an (N, C, H, W) tensor."""
    if top == bottom == left == right == 0:
        return a
    pads = [(0, 0)] * (a.ndim - 2) + [(top, bottom), (left, right)]
    data = np.pad(a.data, pads)
    H, W = a.shape[-2], a.shape[-1]

    def bw(g):
        _accum(a, g[..., top:top + H, left:left + W])

    return _node(data, (a,), bw)


def upsample_nearest(a: Tensor, factor: int) -> Tensor:
    data = a.data.repeat(factor, axis=2).repeat(factor, axis=3)
    N, C, H, W = a.shape

    def bw(g):
        _accum(a, g.reshape(N, C, H, factor, W, factor).sum(axis=(3, 5)))

    return _node(data, (a,), bw)


def conv2d(x: Tensor, w: Tensor, b=None, stride: int = 1, padding: int = 0,
           dilation: int = 1) -> Tensor:
    """2-D convolution on (N, C, H, W) with an (O, C, kh, kw) kernel.

    One im2col copy plus batched GEMMs in both directions; 1x1/stride-1
    kernels skip the im2col copy entirely.
    """
    x, w = as_tensor(x), as_tensor(w)
    if b is not None:
        b = as_tensor(b)
    xd, wd = x.data, w.data
    N, C, H, W = xd.shape
    O, Ci, kh, kw = wd.shape
    if Ci != C:
        raise ValueError(f"conv2d channel mismatch: input {C}, weight expects {Ci}")
    s, d, p = stride, dilation, padding
    Ho = (H + 2 * p - d * (kh - 1) - 1) // s + 1
    Wo = (W + 2 * p - d * (kw - 1) - 1) // s + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p))) if p else xd
    pointwise = kh == 1 and kw == 1 and s == 1 and d == 1

    if pointwise:
        cols = xp.reshape(N, C, Ho * Wo)
    else:
        sn, sc, sh_, sw_ = xp.strides
        view = np.lib.stride_tricks.as_strided(
            xp, shape=(N, C, kh, kw, Ho, Wo),
            strides=(sn, sc, sh_ * d, sw_ * d, sh_ * s, sw_ * s), writeable=False)
        cols = np.ascontiguousarray(view).reshape(N, C * kh * kw, Ho * Wo)
    w2 = wd.reshape(O, C * kh * kw)
    data = np.matmul(w2, cols).reshape(N, O, Ho, Wo)
    if b is not None:
        data += b.data.reshape(1, O, 1, 1)

    parents = (x, w) if b is None else (x, w, b)

    def bw(g):
        if b is not None and b.requires_grad:
            _accum(b, g.sum(axis=(0, 2, 3)))
        g2 = g.reshape(N, O, Ho * Wo)
        if w.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0)
            _accum(w, gw.reshape(O, C, kh, kw))
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2)  # (N, C*kh*kw, Ho*Wo)
            if pointwise:
                _accum(x, gcols.reshape(N, C, H, W))
                return
            gv = gcols.reshape(N, C, kh, kw, Ho, Wo)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                sh = slice(i * d, i * d + (Ho - 1) * s + 1, s)
                for j in range(kw):
                    sw = slice(j * d, j * d + (Wo - 1) * s + 1, s)
                    gxp[:, :, sh, sw] += gv[:, :, i, j]
            _accum(x, gxp[:, :, p:p + H, p:p + W] if p else gxp)

    return _node(data, parents, bw)
