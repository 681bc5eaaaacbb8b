"""Layer primitives with analytic backward passes, plus a minimal tape.

Each op is a :class:`Function` with static ``forward(ctx, *arrays, **kw)`` and
``backward(ctx, grad)``. Tensors are ``(n, c, h, w)`` numpy arrays.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import as_strided


class ShapeError(ValueError):
    pass


class Tensor:
    """Tape node: an array value recorded by a :class:`Tape`."""

    __slots__ = ("value", "name")

    def __init__(self, value, name=None):
        self.value = value
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor({self.name or '?'}, shape={self.value.shape})"


class Tape:
    """Records ops in execution order; replayable backward."""

    def __init__(self):
        self.records = []

    def leaf(self, value, name=None) -> Tensor:
        return Tensor(value, name)

    def apply(self, fn, *inputs, **kw) -> Tensor:
        ctx = {}
        out = fn.forward(ctx, *[t.value for t in inputs], **kw)
        t = Tensor(out)
        self.records.append((fn, ctx, inputs, t))
        return t

    def backward(self, seeds) -> dict:
        """Accumulate gradients from ``[(tensor, grad), ...]``.

        Returns a dict keyed by ``id(tensor)``; nothing on the tape is mutated,
        so calling it twice gives identical results.
        """
        grads = {}
        for t, g in seeds:
            _accumulate(grads, t, g)
        for fn, ctx, inputs, out in reversed(self.records):
            g = grads.get(id(out))
            if g is None:
                continue
            for t, gi in zip(inputs, fn.backward(ctx, g)):
                if gi is not None:
                    _accumulate(grads, t, gi)
        return grads


def _accumulate(grads, t, g):
    k = id(t)
    if k in grads:
        grads[k] = grads[k] + g
    else:
        grads[k] = g


class Function:
    @staticmethod
    def forward(ctx, *args, **kw):
        raise NotImplementedError

    @staticmethod
    def backward(ctx, grad):
        raise NotImplementedError


class Conv2d(Function):
    """Stride-1 cross-correlation with zero padding; bias optional."""

    @staticmethod
    def forward(ctx, x, w, b=None, padding=0):
        n, c, h, wd = x.shape
        o, ci, kh, kw = w.shape
        if ci != c:
            raise ShapeError(f"kernel expects {ci} input channels, got {c}")
        p = padding
        if p:
            xp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=x.dtype)
            xp[:, :, p:p + h, p:p + wd] = x
        else:
            xp = np.ascontiguousarray(x)
        oh, ow = h + 2 * p - kh + 1, wd + 2 * p - kw + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError("kernel larger than padded input")
        s0, s1, s2, s3 = xp.strides
        cols = as_strided(xp, (n, c, kh, kw, oh, ow), (s0, s1, s2, s3, s2, s3),
                          writeable=False).reshape(n, c * kh * kw, oh * ow)
        out = w.reshape(o, -1) @ cols
        if b is not None:
            out = out + b[:, None]
        ctx.update(cols=cols, w=w, xshape=x.shape, p=p, has_b=b is not None)
        return out.reshape(n, o, oh, ow)

    @staticmethod
    def backward(ctx, g):
        w, p, cols = ctx["w"], ctx["p"], ctx["cols"]
        n, c, h, wd = ctx["xshape"]
        o, _, kh, kw = w.shape
        oh, ow = g.shape[2], g.shape[3]
        gm = g.reshape(n, o, oh * ow)
        dw = (gm @ cols.transpose(0, 2, 1)).sum(axis=0).reshape(w.shape)
        dcols = (w.reshape(o, -1).T @ gm).reshape(n, c, kh, kw, oh, ow)
        dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + oh, j:j + ow] += dcols[:, :, i, j]
        dx = dxp[:, :, p:p + h, p:p + wd] if p else dxp
        db = np.einsum("nchw->c", g) if ctx["has_b"] else None
        return dx, dw, db


class BatchNorm(Function):
    """Per-channel normalisation. ``running=(mean, var)`` selects inference
    statistics; otherwise batch statistics are used and left in ``ctx``."""

    @staticmethod
    def forward(ctx, x, gamma, beta, eps=1e-5, running=None):
        if running is None:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            mean = np.einsum("nchw->c", x) / m
            xc = x - mean[:, None, None]
            var = np.einsum("nchw,nchw->c", xc, xc) / m
        else:
            mean, var = (np.asarray(r, dtype=x.dtype) for r in running)
            xc = x - mean[:, None, None]
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv[:, None, None]
        ctx.update(xhat=xhat, inv=inv, gamma=gamma, batch=running is None,
                   mean=mean, var=var, count=x.shape[0] * x.shape[2] * x.shape[3])
        return gamma[:, None, None] * xhat + beta[:, None, None]

    @staticmethod
    def backward(ctx, g):
        xhat, inv, gamma = ctx["xhat"], ctx["inv"], ctx["gamma"]
        dgamma = np.einsum("nchw,nchw->c", g, xhat)
        dbeta = np.einsum("nchw->c", g)
        dxhat = g * gamma[:, None, None]
        if not ctx["batch"]:
            return dxhat * inv[:, None, None], dgamma, dbeta
        m = ctx["count"]
        dx = (inv[:, None, None] / m) * (
            m * dxhat
            - np.einsum("nchw->c", dxhat)[:, None, None]
            - xhat * np.einsum("nchw,nchw->c", dxhat, xhat)[:, None, None]
        )
        return dx, dgamma, dbeta


class ReLU(Function):
    @staticmethod
    def forward(ctx, x):
        ctx["x"] = x
        return np.maximum(x, 0)

    @staticmethod
    def backward(ctx, g):
        return (g * (ctx["x"] > 0),)


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, x):
        y = 0.5 * (1.0 + np.tanh(0.5 * x))
        ctx["y"] = y
        return y

    @staticmethod
    def backward(ctx, g):
        y = ctx["y"]
        return (g * y * (1.0 - y),)


class MaxPool2(Function):
    @staticmethod
    def forward(ctx, x):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even spatial size, got {h}x{w}")
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
        ctx["blocks"] = blocks
        return blocks.max(axis=-1)

    @staticmethod
    def backward(ctx, g):
        blocks = ctx["blocks"]
        n, c, h2, w2, _ = blocks.shape
        h, w = 2 * h2, 2 * w2
        # ties route to the first maximum in each block
        arg = blocks.argmax(axis=-1)
        onehot = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(onehot, arg[..., None], g[..., None], axis=-1)
        dx = onehot.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (dx.reshape(n, c, h, w),)


@lru_cache(maxsize=64)
def _upsample_matrix(size: int, dtype=np.float64) -> np.ndarray:
    """(2*size, size) bilinear weights, half-pixel centres, edge clamped."""
    m = np.zeros((2 * size, size), dtype=dtype)
    for i in range(2 * size):
        src = min(max((i + 0.5) / 2.0 - 0.5, 0.0), size - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, size - 1)
        f = src - lo
        m[i, lo] += 1.0 - f
        m[i, hi] += f
    m.setflags(write=False)
    return m


class Upsample2(Function):
    """Bilinear x2 upsampling as a separable linear map."""

    @staticmethod
    def forward(ctx, x):
        uh = _upsample_matrix(x.shape[2], x.dtype.type)
        uw = _upsample_matrix(x.shape[3], x.dtype.type)
        ctx.update(uh=uh, uw=uw)
        return uh @ x @ uw.T

    @staticmethod
    def backward(ctx, g):
        return (ctx["uh"].T @ g @ ctx["uw"],)


class Concat(Function):
    @staticmethod
    def forward(ctx, a, b):
        if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
            raise ShapeError(f"cannot concatenate {a.shape} and {b.shape}")
        ctx["split"] = a.shape[1]
        return np.concatenate([a, b], axis=1)

    @staticmethod
    def backward(ctx, g):
        k = ctx["split"]
        return g[:, :k], g[:, k:]


class Gate(Function):
    """``x * a`` with a single-channel ``a`` broadcast over channels."""

    @staticmethod
    def forward(ctx, x, a):
        if a.shape[1] != 1 or a.shape[0] != x.shape[0] or a.shape[2:] != x.shape[2:]:
            raise ShapeError(f"gate {a.shape} does not match features {x.shape}")
        ctx.update(x=x, a=a)
        return x * a

    @staticmethod
    def backward(ctx, g):
        return g * ctx["a"], (g * ctx["x"]).sum(axis=1, keepdims=True)


def conv2d(x, w, b=None, padding=0):
    return Conv2d.forward({}, x, w, b, padding=padding)


def relu(x):
    return ReLU.forward({}, x)


def sigmoid(x):
    return Sigmoid.forward({}, x)


def maxpool2(x):
    return MaxPool2.forward({}, x)


def upsample2(x):
    return Upsample2.forward({}, x)
