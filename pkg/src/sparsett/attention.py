"""Dense and top-K sparse scaled dot-product attention, and the multi-head wrapper.

Shapes follow the usual convention: ``query`` is (..., n, d), ``key`` is
given already transposed as (..., d, m) and ``value`` is (..., m, d).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ops
from .errors import ConfigError
from .nn import Linear, Module
from .tensor import Tensor, add_mask

_margin_probes: list[list[float]] = []


@contextlib.contextmanager
def record_topk_margins():
    """Collect, per sparse attention call, the smallest gap between the
    K-th and (K+1)-th similarity of any row.  Gradient checks use it to
    stay away from selection boundaries."""
    probe: list[float] = []
    _margin_probes.append(probe)
    try:
        yield probe
    finally:
        _margin_probes.remove(probe)


def topk_margin(scores: np.ndarray, k: int) -> float:
    m = scores.shape[-1]
    if k >= m:
        return float("inf")
    part = -np.sort(-scores.reshape(-1, m), axis=1)
    return float((part[:, k - 1] - part[:, k]).min())


@dataclass
class AttentionConfig:
    model_dim: int
    heads: int = 8
    sparseness: int = 32
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.heads < 1 or self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.sparseness < 1:
            raise ConfigError(f"sparseness must be >= 1, got {self.sparseness}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads


def _scores(query: Tensor, key: Tensor, mask) -> Tensor:
    s = ops.matmul(query, key) * (1.0 / np.sqrt(query.shape[-1]))
    if mask is not None:
        s = add_mask(s, mask)
    return s


def scaled_dot_product(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    mask=None,
    *,
    dropout: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    return_weights: bool = False,
):
    """softmax(query·key/√d + mask)·value."""
    weights = ops.softmax_rows(_scores(query, key, mask))
    weights = ops.dropout(weights, dropout, training, rng)
    out = ops.matmul(weights, value)
    return (out, weights) if return_weights else out


def sparse_scaled_dot_product(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    mask=None,
    k: int = 32,
    *,
    dropout: float = 0.0,
    training: bool = False,
    rng: Optional[np.random.Generator] = None,
    return_weights: bool = False,
):
    """Attention where each row keeps only its ``k`` largest scaled similarities.

    The kept entries are softmax-normalised among themselves and scattered
    back into a zero matrix before the product with ``value``.  With ``k``
    at least the key count this is the dense path.
    """
    scores = _scores(query, key, mask)
    width = scores.shape[-1]
    if _margin_probes:
        gap = topk_margin(scores.data, k)
        for probe in _margin_probes:
            probe.append(gap)
    top = ops.topk_rows(scores, k)
    weights = ops.scatter_rows(ops.softmax_rows(top.values), top.indices, width, validate=False)
    weights = ops.dropout(weights, dropout, training, rng)
    out = ops.matmul(weights, value)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """Per-head projections, dense or sparse attention, concat, output projection.

    ``MSA``: ``mha(x)``; ``SMSA``: the same with ``sparse=True``;
    ``MCA``: ``mha(x, memory, memory)``.
    """

    def __init__(self, cfg: AttentionConfig, rng: np.random.Generator, sparse: bool = False,
                 dropout_rng: Optional[np.random.Generator] = None, dtype=np.float64):
        c = cfg.model_dim
        self.cfg = cfg
        self.sparse = sparse
        self.q_proj = Linear(c, c, rng, dtype=dtype)
        self.k_proj = Linear(c, c, rng, dtype=dtype)
        self.v_proj = Linear(c, c, rng, dtype=dtype)
        self.out_proj = Linear(c, c, rng, dtype=dtype)
        self.dropout_rng = dropout_rng

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        h = self.cfg.heads
        return x.reshape(b, n, h, self.cfg.head_dim).transpose(0, 2, 1, 3)

    def forward(self, query: Tensor, key: Optional[Tensor] = None, value: Optional[Tensor] = None,
                mask=None, return_weights: bool = False):
        key = query if key is None else key
        value = key if value is None else value
        unbatched = query.ndim == 2
        if unbatched:
            query, key, value = (t.reshape((1,) + t.shape) for t in (query, key, value))
        b, n, c = query.shape
        q = self._split(self.q_proj(query))
        kt = self._split(self.k_proj(key)).transpose(0, 1, 3, 2)
        v = self._split(self.v_proj(value))
        cfg = self.cfg
        kw = dict(dropout=cfg.dropout, training=self.training, rng=self.dropout_rng, return_weights=True)
        if self.sparse:
            att, weights = sparse_scaled_dot_product(q, kt, v, mask, cfg.sparseness, **kw)
        else:
            att, weights = scaled_dot_product(q, kt, v, mask, **kw)
        merged = att.transpose(0, 2, 1, 3).reshape(b, n, c)
        out = ops.dropout(self.out_proj(merged), cfg.dropout, self.training, self.dropout_rng)
        if unbatched:
            out = out.reshape(n, c)
        return (out, weights) if return_weights else out


def _separated_inputs(rng, n, m, d, k, tries: int = 200):
    """Random q/kᵀ/v whose top-k selection has a margin above 1e-3."""
    for _ in range(tries):
        q = rng.standard_normal((n, d))
        kt = rng.standard_normal((d, m))
        if topk_margin(q @ kt / np.sqrt(d), k) > 1e-3:
            return q, kt, rng.standard_normal((m, d))
    raise RuntimeError("could not draw well-separated attention inputs")


def gradcheck_cases():
    def c_dense(rng):
        q, kt, v = (Tensor(a) for a in _separated_inputs(rng, 5, 7, 4, 7))
        w = rng.standard_normal((5, 4))
        return (lambda: (scaled_dot_product(q, kt, v) * Tensor(w)).sum()), [q, kt, v]

    def c_sparse(rng):
        q, kt, v = (Tensor(a) for a in _separated_inputs(rng, 5, 7, 4, 3))
        w = rng.standard_normal((5, 4))
        return (lambda: (sparse_scaled_dot_product(q, kt, v, k=3) * Tensor(w)).sum()), [q, kt, v]

    def c_smsa(rng):
        cfg = AttentionConfig(model_dim=8, heads=2, sparseness=3, dropout=0.0)
        mha = MultiHeadAttention(cfg, rng, sparse=True)
        for _ in range(200):
            x = Tensor(rng.standard_normal((2, 6, 8)))
            with record_topk_margins() as gaps:
                mha(x)
            if min(gaps) > 1e-3:
                break
        w = rng.standard_normal((2, 6, 8))
        return (lambda: (mha(x) * Tensor(w)).sum()), [x] + mha.parameters()

    def c_mca(rng):
        cfg = AttentionConfig(model_dim=8, heads=2, sparseness=3, dropout=0.0)
        mha = MultiHeadAttention(cfg, rng)
        x = Tensor(rng.standard_normal((2, 6, 8)))
        mem = Tensor(rng.standard_normal((2, 4, 8)))
        w = rng.standard_normal((2, 6, 8))
        return (lambda: (mha(x, mem, mem) * Tensor(w)).sum()), [x, mem] + mha.parameters()

    return {
        "scaled_dot_product": c_dense,
        "sparse_scaled_dot_product": c_sparse,
        "multi_head_sparse": c_smsa,
        "multi_head_cross": c_mca,
    }
