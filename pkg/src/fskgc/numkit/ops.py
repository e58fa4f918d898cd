"""Differentiable operations over :class:`~fskgc.numkit.tensor.Tensor`.

Each op computes its result eagerly with numpy and, when a tape is active
and an input requires a gradient, records a closure that maps the upstream
gradient to per-input gradients.  Broadcasting follows numpy rules; the
backward pass sums gradients over broadcast axes.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import NumericError, ShapeError
from .tensor import Tensor, as_tensor, is_checked, record


def _check(out: np.ndarray, kind: str) -> np.ndarray:
    if is_checked() and not np.all(np.isfinite(out)):
        raise NumericError(f"{kind} produced non-finite values")
    return out


def _unbroadcast(target_shape: tuple[int, ...], g: np.ndarray) -> np.ndarray:
    """Sum ``g`` down to ``target_shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(target_shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(target_shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check(a.data + b.data, "add"))
    except ValueError as e:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from e
    if _needs_grad(a, b):

        def bw(g):
            pairs = []
            if a.requires_grad:
                pairs.append((a, _unbroadcast(a.data.shape, g)))
            if b.requires_grad:
                pairs.append((b, _unbroadcast(b.data.shape, g)))
            return pairs

        record(out, bw)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check(a.data - b.data, "sub"))
    except ValueError as e:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}") from e
    if _needs_grad(a, b):

        def bw(g):
            pairs = []
            if a.requires_grad:
                pairs.append((a, _unbroadcast(a.data.shape, g)))
            if b.requires_grad:
                pairs.append((b, _unbroadcast(b.data.shape, -g)))
            return pairs

        record(out, bw)
    return out


def mul(a, b) -> Tensor:
    """Elementwise (or scalar) multiplication."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        out = Tensor(_check(a.data * b.data, "mul"))
    except ValueError as e:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from e
    if _needs_grad(a, b):
        ad, bd = a.data, b.data

        def bw(g):
            pairs = []
            if a.requires_grad:
                pairs.append((a, _unbroadcast(ad.shape, g * bd)))
            if b.requires_grad:
                pairs.append((b, _unbroadcast(bd.shape, g * ad)))
            return pairs

        record(out, bw)
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supported shapes: 2D @ 2D, ND @ 2D (stacked rows against one weight
    matrix), and ND @ ND with identical leading dimensions.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(
            f"matmul expects rank >= 2 operands, got {ad.shape} @ {bd.shape}"
        )
    if ad.ndim > 2 and bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(
            f"matmul leading dims differ: {ad.shape} @ {bd.shape}"
        )
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = Tensor(_check(ad @ bd, "matmul"))
    if _needs_grad(a, b):

        def bw(g):
            pairs = []
            if a.requires_grad:
                ga = g @ np.swapaxes(bd, -1, -2)
                pairs.append((a, ga))
            if b.requires_grad:
                if bd.ndim == 2 and ad.ndim > 2:
                    k = ad.shape[-1]
                    gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = np.swapaxes(ad, -1, -2) @ g
                pairs.append((b, gb))
            return pairs

        record(out, bw)
    return out


def dot(a, b) -> Tensor:
    """Inner product of two 1-D vectors, yielding a scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"dot expects equal-length vectors, got {a.shape}, {b.shape}")
    out = Tensor(_check(a.data @ b.data, "dot"))
    if _needs_grad(a, b):
        ad, bd = a.data, b.data

        def bw(g):
            pairs = []
            if a.requires_grad:
                pairs.append((a, g * bd))
            if b.requires_grad:
                pairs.append((b, g * ad))
            return pairs

        record(out, bw)
    return out


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    if x.requires_grad:
        orig = x.data.shape

        def bw(g):
            return [(x, g.reshape(orig))]

        record(out, bw)
    return out


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = Tensor(np.transpose(x.data, axes))
    if x.requires_grad:
        inv = np.argsort(axes)

        def bw(g):
            return [(x, np.transpose(g, inv))]

        record(out, bw)
    return out


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    """Concatenate along ``axis`` (last axis by default)."""
    ts = [as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    except ValueError as e:
        raise ShapeError(
            f"concat: incompatible shapes {[t.shape for t in ts]}"
        ) from e
    if any(t.requires_grad for t in ts):
        ax = axis if axis >= 0 else out.data.ndim + axis
        sizes = np.cumsum([t.data.shape[ax] for t in ts])[:-1]

        def bw(g):
            parts = np.split(g, sizes, axis=ax)
            return [(t, p) for t, p in zip(ts, parts) if t.requires_grad]

        record(out, bw)
    return out


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = Tensor(np.stack([t.data for t in ts], axis=axis))
    except ValueError as e:
        raise ShapeError(
            f"stack: incompatible shapes {[t.shape for t in ts]}"
        ) from e
    if any(t.requires_grad for t in ts):

        def bw(g):
            parts = np.moveaxis(g, axis, 0)
            return [(t, parts[i]) for i, t in enumerate(ts) if t.requires_grad]

        record(out, bw)
    return out


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def _expand_to(g: np.ndarray, shape: tuple[int, ...], axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def tsum(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.sum(axis=axis))
    if x.requires_grad:
        shape = x.data.shape

        def bw(g):
            return [(x, _expand_to(g, shape, axis).copy())]

        record(out, bw)
    return out


def tmean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    out = Tensor(x.data.mean(axis=axis))
    if x.requires_grad:
        shape = x.data.shape
        n = x.data.size if axis is None else shape[axis]

        def bw(g):
            return [(x, _expand_to(g, shape, axis) / n)]

        record(out, bw)
    return out


def sqnorm(x) -> Tensor:
    """Squared L2 norm along the last axis."""
    x = as_tensor(x)
    out = Tensor(_check((x.data * x.data).sum(axis=-1), "sqnorm"))
    if x.requires_grad:
        xd = x.data

        def bw(g):
            return [(x, 2.0 * xd * np.expand_dims(g, -1))]

        record(out, bw)
    return out


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


# Closest float64 values strictly inside (0, 1); saturated logistic outputs
# are clamped here so the open-interval contract holds at any input.
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    e = np.exp(-np.abs(xd))
    y = np.where(xd >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    y = np.clip(y, _SIG_LO, _SIG_HI)
    out = Tensor(_check(y, "sigmoid"))
    if x.requires_grad:

        def bw(g):
            return [(x, g * y * (1.0 - y))]

        record(out, bw)
    return out


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = Tensor(y)
    if x.requires_grad:

        def bw(g):
            return [(x, g * (1.0 - y * y))]

        record(out, bw)
    return out


def relu(x) -> Tensor:
    x = as_tensor(x)
    y = np.maximum(x.data, 0.0)
    out = Tensor(y)
    if x.requires_grad:
        mask = x.data > 0

        def bw(g):
            return [(x, g * mask)]

        record(out, bw)
    return out


def log(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(_check(np.log(x.data), "log"))
    if x.requires_grad:
        xd = x.data

        def bw(g):
            return [(x, g / xd)]

        record(out, bw)
    return out


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    out = Tensor(_check(y, "exp"))
    if x.requires_grad:

        def bw(g):
            return [(x, g * y)]

        record(out, bw)
    return out


def softmax(x) -> Tensor:
    """Softmax along the last axis (stable under large logits)."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(_check(p, "softmax"))
    if x.requires_grad:

        def bw(g):
            inner = (g * p).sum(axis=-1, keepdims=True)
            return [(x, p * (g - inner))]

        record(out, bw)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Layer normalization along the last axis with learnable gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got "
            f"{gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(_check(xhat * gain.data + bias.data, "layer_norm"))
    if _needs_grad(x, gain, bias):
        gd = gain.data

        def bw(g):
            pairs = []
            if gain.requires_grad:
                pairs.append((gain, (g * xhat).reshape(-1, d).sum(axis=0)))
            if bias.requires_grad:
                pairs.append((bias, g.reshape(-1, d).sum(axis=0)))
            if x.requires_grad:
                dxhat = g * gd
                m1 = dxhat.mean(axis=-1, keepdims=True)
                m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
                pairs.append((x, inv * (dxhat - m1 - xhat * m2)))
            return pairs

        record(out, bw)
    return out


def cosine(a, b) -> Tensor:
    """Cosine similarity along the last axis, broadcasting leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-1]:
        raise ShapeError(f"cosine: last dims differ ({a.shape} vs {b.shape})")
    ad, bd = a.data, b.data
    sa = (ad * ad).sum(axis=-1)
    sb = (bd * bd).sum(axis=-1)
    na = np.sqrt(sa)
    nb = np.sqrt(sb)
    s = (ad * bd).sum(axis=-1)
    denom = na * nb
    with np.errstate(invalid="ignore", divide="ignore"):
        out = Tensor(_check(s / denom, "cosine"))
    if _needs_grad(a, b):
        cos = out.data

        def bw(g):
            pairs = []
            ge = np.expand_dims(g, -1)
            if a.requires_grad:
                ga = ge * (bd / np.expand_dims(denom, -1)
                           - ad * np.expand_dims(cos / sa, -1))
                pairs.append((a, _unbroadcast(ad.shape, ga)))
            if b.requires_grad:
                gb = ge * (ad / np.expand_dims(denom, -1)
                           - bd * np.expand_dims(cos / sb, -1))
                pairs.append((b, _unbroadcast(bd.shape, gb)))
            return pairs

        record(out, bw)
    return out


# ---------------------------------------------------------------------------
# indexed access
# ---------------------------------------------------------------------------


def gather(table, idx) -> Tensor:
    """Select rows of ``table`` (axis 0) by integer index.

    The gradient scatter-adds into a dense zero buffer of the table's shape,
    so repeated indices accumulate.
    """
    table = as_tensor(table)
    idx_arr = np.asarray(idx, dtype=np.int64)
    if idx_arr.ndim != 1:
        raise ShapeError(f"gather expects a 1-D index list, got shape {idx_arr.shape}")
    n = table.data.shape[0]
    if idx_arr.size and (idx_arr.min() < 0 or idx_arr.max() >= n):
        raise ShapeError(f"gather index out of range for table of {n} rows")
    out = Tensor(table.data[idx_arr])
    if table.requires_grad:

        def bw(g):
            gt = np.zeros_like(table.data)
            np.add.at(gt, idx_arr, g)
            return [(table, gt)]

        record(out, bw)
    return out


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``values`` into ``num_segments`` buckets."""
    values = as_tensor(values)
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.ndim != 1 or seg.shape[0] != values.data.shape[0]:
        raise ShapeError(
            f"segment_sum: ids shape {seg.shape} does not match "
            f"{values.data.shape[0]} rows"
        )
    out_data = np.zeros((num_segments,) + values.data.shape[1:], dtype=np.float64)
    np.add.at(out_data, seg, values.data)
    out = Tensor(out_data)
    if values.requires_grad:

        def bw(g):
            return [(values, g[seg])]

        record(out, bw)
    return out


__all__ = [
    "add", "sub", "mul", "matmul", "dot", "reshape", "transpose", "concat",
    "stack", "tsum", "tmean", "sqnorm", "sigmoid", "tanh", "relu", "log",
    "exp", "softmax", "layer_norm", "cosine", "gather", "segment_sum",
]
