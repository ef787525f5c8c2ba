"""Differentiable neural-network operations on :class:`Tensor`.

Row-wise ops (softmax, top-K, scatter) act on the last axis and treat all
leading axes as independent rows, so batched and multi-head inputs need no
special casing.
"""

from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import DegenerateRowError, DimensionError
from .tensor import Tensor, _wrap, record, unbroadcast


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    a, b = _wrap(a), _wrap(b)
    x, y = a.data, b.data
    if x.ndim < 2 or y.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {x.shape} and {y.shape}")
    if x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {x.shape} @ {y.shape}")
    try:
        out = np.matmul(x, y)
    except ValueError as exc:
        raise DimensionError(str(exc)) from exc

    def back(g):
        ga = unbroadcast(np.matmul(g, np.swapaxes(y, -1, -2)), x.shape)
        gb = unbroadcast(np.matmul(np.swapaxes(x, -1, -2), g), y.shape)
        return ga, gb

    return record("matmul", (a, b), out, back)


def softmax_rows(m: Tensor) -> Tensor:
    """Softmax along the last axis; -inf entries map to exactly zero."""
    x = m.data
    peak = x.max(axis=-1, keepdims=True)
    if np.isneginf(peak).any():
        raise DegenerateRowError("softmax row is entirely -inf")
    e = np.exp(x - peak)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return record("softmax_rows", (m,), out, back)


class TopK(NamedTuple):
    values: Tensor
    indices: np.ndarray
    counts: np.ndarray

    @property
    def short(self) -> np.ndarray:
        """Rows that had fewer than k entries above -inf."""
        return self.counts < self.indices.shape[-1]


def _rows(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def topk_rows(m: Tensor, k: int) -> TopK:
    """The ``k`` largest entries of each row in descending order.

    Ties go to the smaller column index.  When a row holds fewer than ``k``
    entries above -inf, the remaining slots carry -inf values (and the
    indices of masked columns); ``counts`` reports how many are finite.
    ``k`` larger than the row width is clipped to the width.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    x = m.data
    lead, c = x.shape[:-1], x.shape[-1]
    flat = _rows(x)
    idx = _kernels.topk_indices(flat, int(k))
    vals = _kernels.gather_rows(flat, idx)
    kk = idx.shape[1]
    counts = np.isfinite(vals).sum(axis=1).reshape(lead)

    def back(g):
        full = _kernels.scatter_rows(_rows(g), idx, c, False)
        return (full.reshape(x.shape),)

    values = record("topk_rows", (m,), vals.reshape(lead + (kk,)), back, allow_nonfinite=True)
    return TopK(values, idx.reshape(lead + (kk,)), counts)


def scatter_rows(values: Tensor, indices: np.ndarray, width: int, validate: bool = True) -> Tensor:
    """Write each row's values into a zero row of ``width`` at ``indices``."""
    v = values.data
    idx = np.asarray(indices)
    if idx.shape != v.shape:
        raise DimensionError(f"indices shape {idx.shape} != values shape {v.shape}")
    lead = v.shape[:-1]
    flat_idx = np.ascontiguousarray(idx.reshape(-1, idx.shape[-1]), dtype=np.int64)
    out = _kernels.scatter_rows(_rows(v), flat_idx, int(width), validate)

    def back(g):
        return (_kernels.gather_rows(_rows(g), flat_idx).reshape(v.shape),)

    return record("scatter_rows", (values,), out.reshape(lead + (int(width),)), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then scale and shift."""
    d = x.data
    if gain.shape != d.shape[-1:] or bias.shape != d.shape[-1:]:
        raise DimensionError(f"layer_norm affine params must have shape {d.shape[-1:]}")
    mu = d.mean(axis=-1, keepdims=True)
    centered = d - mu
    inv = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data

    def back(g):
        red = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=red)
        dbias = g.sum(axis=red)
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgain, dbias

    return record("layer_norm", (x, gain, bias), out, back)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    d, w = x.data, weight.data
    if d.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {d.shape[-1]} != weight rows {w.shape[0]}")
    out = d @ w
    if bias is not None:
        out = out + bias.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ w.T
        gw = d.reshape(-1, d.shape[-1]).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("linear", inputs, out, back)


def relu(x: Tensor) -> Tensor:
    d = x.data
    keep = d > 0
    return record("relu", (x,), np.where(keep, d, 0.0).astype(d.dtype, copy=False),
                  lambda g: (g * keep,))


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; the identity (same object) when not training."""
    if not training or rate <= 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    scale = (rng.random(x.shape) >= rate) * (1.0 / (1.0 - rate))
    scale = scale.astype(x.dtype, copy=False)
    return record("dropout", (x,), x.data * scale, lambda g: (g * scale,))


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with explicit zero padding.

    ``x`` is (C_in, H, W) or (B, C_in, H, W); ``weight`` is (C_out, C_in, kh, kw).
    """
    d = x.data
    unbatched = d.ndim == 3
    if unbatched:
        d = d[None]
    if d.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects (B,C,H,W) input and 4-D kernels, got {x.shape}, {weight.shape}")
    w = weight.data
    cout, cin, kh, kw = w.shape
    if d.shape[1] != cin:
        raise DimensionError(f"conv2d: input has {d.shape[1]} channels, kernels expect {cin}")
    p, s = int(padding), int(stride)
    xp = np.pad(d, ((0, 0), (0, 0), (p, p), (p, p))) if p else d
    hp, wp = xp.shape[2], xp.shape[3]
    if hp < kh or wp < kw:
        raise DimensionError("conv2d: kernel larger than padded input")
    ho, wo = (hp - kh) // s + 1, (wp - kw) // s + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # (B, Ho, Wo, Cout) -> (B, Cout, Ho, Wo)
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    out = np.ascontiguousarray(out)

    def back(g):
        if unbatched:
            g = g[None]
        gw = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))
        cols = np.tensordot(g, w, axes=([1], [0]))  # (B, Ho, Wo, Cin, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:hp - p, p:wp - p] if p else gxp
        if unbatched:
            gx = gx[0]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    if unbatched:
        out = out[0]
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record("conv2d", inputs, out, back)
