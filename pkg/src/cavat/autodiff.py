"""Minimal reverse-mode automatic differentiation over numpy arrays.

A tape-free, closure-based engine in the micrograd style: each op records its
parents and a backward closure, ``backward()`` runs the chain rule over a
topological ordering. Only the handful of ops the segmentation losses need
are implemented (broadcasted arithmetic, reductions, conv2d, softmax, log,
relu, clamp). Everything is float64 and deterministic.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Tensor", "astensor", "conv2d", "softmax"]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph construction --------------------------------------------------

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.ndim != 0:
            raise ValueError("backward() requires a scalar loss")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        other = astensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __mul__(self, other):
        other = astensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-astensor(other))

    def __rsub__(self, other):
        return astensor(other) + (-self)

    def __truediv__(self, scalar):
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not supported")
        return self * (1.0 / float(scalar))

    # -- elementwise -----------------------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def back(g):
            a._accumulate(g * mask)

        return Tensor._make(np.where(mask, a.data, 0.0), (a,), back)

    def exp(self):
        a = self
        out_data = np.exp(a.data)

        def back(g):
            a._accumulate(g * out_data)

        return Tensor._make(out_data, (a,), back)

    def log(self):
        a = self

        def back(g):
            a._accumulate(g / a.data)

        return Tensor._make(np.log(a.data), (a,), back)

    def clamp_min(self, floor: float):
        """max(x, floor); gradient passes only where x > floor."""
        a = self
        mask = a.data > floor

        def back(g):
            a._accumulate(g * mask)

        return Tensor._make(np.maximum(a.data, floor), (a,), back)

    def square(self):
        return self * self

    # -- shape ------------------------------------------------------------------

    def reshape(self, *shape):
        a = self
        old = a.data.shape

        def back(g):
            a._accumulate(g.reshape(old))

        return Tensor._make(a.data.reshape(*shape), (a,), back)

    def moveaxis(self, src, dst):
        a = self

        def back(g):
            a._accumulate(np.moveaxis(g, dst, src))

        return Tensor._make(np.moveaxis(a.data, src, dst), (a,), back)

    # -- reductions ---------------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            gg = np.asarray(g)
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape))

        return Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[ax] for ax in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))


def astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Reduce gradient ``g`` back to ``shape`` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis``."""
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        t._accumulate((g - dot) * y)

    return Tensor._make(y, (t,), back)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(B, C, H, W) -> (B, C*kh*kw, H*W) patches under same zero padding.

    Row order matches W.reshape(Cout, -1): channel-major, then kernel row,
    then kernel column.
    """
    b, c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=np.float64)
    xp[:, :, ph : ph + h, pw : pw + w] = x
    kk = kh * kw
    cols = np.empty((b, c * kk, h * w), dtype=np.float64)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di : di + h, dj : dj + w].reshape(b, c, h * w)
            cols[:, di * kw + dj :: kk, :] = patch
    return cols


def _corr2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None):
    """Raw cross-correlation, stride 1, same zero padding. Returns (y, cols)."""
    bt, _, h, wd = x.shape
    co, _, kh, kw = w.shape
    cols = _im2col(x, kh, kw)
    y = np.matmul(w.reshape(co, -1), cols)  # (B, Cout, H*W)
    if b is not None:
        y += b[:, None]
    return y.reshape(bt, co, h, wd), cols


def conv2d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """2D convolution (cross-correlation), stride 1, odd kernel, same padding.

    x: (B, Cin, H, W), w: (Cout, Cin, kh, kw), b: (Cout,).
    """
    co, ci, kh, kw = w.data.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("conv2d requires odd kernel sizes")
    if x.data.ndim != 4 or x.data.shape[1] != ci:
        raise ValueError(
            f"conv2d input shape {x.data.shape} incompatible with kernel {w.data.shape}"
        )
    y, cols = _corr2d(x.data, w.data, b.data)

    def back(g):
        bt, _, h, wd = x.data.shape
        gmat = g.reshape(bt, co, h * wd)
        if w.requires_grad:
            gw = np.einsum("bop,bkp->ok", gmat, cols, optimize=True)
            w._accumulate(gw.reshape(w.data.shape))
        if b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            wback = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            gx, _ = _corr2d(g, np.ascontiguousarray(wback), None)
            x._accumulate(gx)

    return Tensor._make(y, (x, w, b), back)
