"""Primitives with hand-written backward rules.

Vectors are 1-D arrays, token matrices are 2-D (rows = tokens).  Only the
broadcasts used by the encoding stack are supported: a row vector added to
every row of a matrix, and a scalar tensor scaling a matrix.
"""

from __future__ import annotations

import math

import numpy as np

from .tape import DimensionError, Tensor, _record, as_tensor

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
LN_EPS = 1e-5


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
        raise DimensionError(f"matmul needs 1-D or 2-D operands, got {a.shape} and {b.shape}")
    a2 = a.data.reshape(1, -1) if a.data.ndim == 1 else a.data
    b2 = b.data.reshape(-1, 1) if b.data.ndim == 1 else b.data
    if a2.shape[1] != b2.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        g2 = np.asarray(g).reshape(a2.shape[0], b2.shape[1])
        a.accumulate((g2 @ b2.T).reshape(a.shape))
        b.accumulate((a2.T @ g2).reshape(b.shape))

    return _record(out, (a, b), "matmul", backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise DimensionError(f"transpose needs a matrix, got {a.shape}")
    return _record(a.data.T.copy(), (a,), "transpose", lambda g: a.accumulate(g.T))


def add(a, b) -> Tensor:
    """Elementwise sum; ``b`` may also be a row vector broadcast over rows of ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape == b.shape:
        def backward(g):
            a.accumulate(g)
            b.accumulate(g)
    elif a.data.ndim == 2 and b.data.ndim == 1 and b.shape[0] == a.shape[1]:
        def backward(g):
            a.accumulate(g)
            b.accumulate(g.sum(axis=0))
    else:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return _record(a.data + b.data, (a, b), "add", backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}")

    def backward(g):
        a.accumulate(g)
        b.accumulate(-g)

    return _record(a.data - b.data, (a, b), "sub", backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _record(a.data * c, (a,), "scale", lambda g: a.accumulate(g * c))


def mul(s, m) -> Tensor:
    """Scalar tensor ``s`` times tensor ``m``."""
    s, m = as_tensor(s), as_tensor(m)
    if s.data.size != 1:
        raise DimensionError(f"mul expects a scalar first operand, got {s.shape}")
    sv = s.data.reshape(())

    def backward(g):
        s.accumulate(np.asarray(np.sum(g * m.data)).reshape(s.shape))
        m.accumulate(g * sv)

    return _record(sv * m.data, (s, m), "mul", backward)


def row_softmax(x) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x.accumulate(y * (g - np.sum(g * y, axis=-1, keepdims=True)))

    return _record(y, (x,), "row_softmax", backward)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs width d >= 2; width 1 normalizes to a constant")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine params must have shape ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        gx = g * gain.data
        x.accumulate(inv * (gx - gx.mean(axis=-1, keepdims=True)
                            - xhat * (gx * xhat).mean(axis=-1, keepdims=True)))
        gain.accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        bias.accumulate(g.reshape(-1, d).sum(axis=0))

    return _record(out, (x, gain, bias), "layer_norm", backward)


def gelu_value(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + GELU_A * x ** 3)))


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    t = np.tanh(GELU_C * (x + GELU_A * x ** 3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)


def gelu(x) -> Tensor:
    x = as_tensor(x)
    return _record(gelu_value(x.data), (x,), "gelu",
                   lambda g: x.accumulate(g * gelu_derivative(x.data)))


def mean_pool_rows(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim != 2 or x.shape[0] < 1:
        raise DimensionError(f"mean_pool_rows needs an L x d matrix with L >= 1, got {x.shape}")
    L = x.shape[0]
    return _record(x.data.mean(axis=0), (x,), "mean_pool_rows",
                   lambda g: x.accumulate(np.broadcast_to(g / L, x.shape)))


def total(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.asarray(x.data.sum()), (x,), "sum",
                   lambda g: x.accumulate(np.broadcast_to(g, x.shape)))


def sum_squares(x) -> Tensor:
    x = as_tensor(x)
    return _record(np.asarray(np.sum(x.data * x.data)), (x,), "sum_squares",
                   lambda g: x.accumulate(2.0 * g * x.data))


def softmax_pair(a, b) -> tuple[Tensor, Tensor]:
    """Two-way softmax whose outputs sum to exactly 1.0.

    The smaller weight is computed directly from exp(-|a-b|); the larger is
    its complement, which is exact in binary floating point.
    """
    a, b = as_tensor(a), as_tensor(b)
    gap = float(a.data.reshape(())) - float(b.data.reshape(()))
    e = math.exp(-abs(gap))
    small = e / (1.0 + e)
    large = 1.0 - small
    wa, wb = (large, small) if gap >= 0 else (small, large)
    pair = _record(np.array([wa, wb]), (a, b), "softmax_pair", None)

    def backward(g):
        # d wa / d a = wa * wb, d wa / d b = -wa * wb
        j = wa * wb * (g[0] - g[1])
        a.accumulate(np.asarray(j).reshape(a.shape))
        b.accumulate(np.asarray(-j).reshape(b.shape))

    pair.backward_fn = backward
    return index(pair, 0), index(pair, 1)


def index(v, i: int) -> Tensor:
    v = as_tensor(v)

    def backward(g):
        full = np.zeros_like(v.data)
        full.flat[i] = g
        v.accumulate(full)

    return _record(np.asarray(v.data.flat[i]), (v,), "index", backward)
