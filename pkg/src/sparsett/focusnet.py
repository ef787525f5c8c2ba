"""Encoder-decoder sparse transformer that fuses template into search features.

Encoder layer:  x = Norm(MSA(x) + x);  x = Norm(FFN(x) + x)
Decoder layer:  x = Norm(SMSA(y) + y)
                y = Norm(MCA(x, mem, mem) + x)
                y = Norm(FFN(y) + y)

Position encodings are added once, before the first layer of each stack.
Every decoder layer attends to the same encoder output ``mem``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import ops
from .attention import AttentionConfig, MultiHeadAttention
from .errors import ConfigError, DimensionError
from .nn import LayerNorm, Linear, Module
from .tensor import Tensor


@dataclass
class FocusNetConfig:
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention: AttentionConfig = field(default_factory=lambda: AttentionConfig(256))
    ffn_hidden: int = 2048
    template_hw: tuple = (16, 16)
    search_hw: tuple = (37, 37)
    position_encoding: str = "sine2d"

    def __post_init__(self) -> None:
        if self.encoder_layers < 0:
            raise ConfigError("encoder_layers must be >= 0")
        if self.decoder_layers < 1:
            raise ConfigError("decoder_layers must be >= 1")
        if self.position_encoding != "sine2d":
            raise ConfigError(f"unknown position encoding {self.position_encoding!r}")

    @property
    def channels(self) -> int:
        return self.attention.model_dim


@dataclass(frozen=True)
class PositionEncoding:
    grid: Tensor
    height: int
    width: int


def position_encoding(height: int, width: int, channels: int, temperature: float = 10000.0) -> PositionEncoding:
    """Fixed 2-D sinusoidal encoding, one row per token in row-major order.

    Channels ``[0, C/2)`` encode the column (x), ``[C/2, C)`` the row (y);
    within each half even channels are sines and odd channels cosines of a
    geometric frequency ladder.
    """
    if channels % 4:
        raise ConfigError(f"position encoding needs channels divisible by 4, got {channels}")
    half = channels // 2
    freqs = temperature ** (-np.arange(0, half, 2) / half)
    ys, xs = np.divmod(np.arange(height * width), width)

    def ladder(pos):
        ang = pos[:, None] * freqs[None, :]
        out = np.empty((len(pos), half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    grid = np.concatenate([ladder(xs.astype(float)), ladder(ys.astype(float))], axis=1)
    return PositionEncoding(Tensor(grid), height, width)


class FeedForward(Module):
    def __init__(self, channels: int, hidden: int, dropout: float, rng, dropout_rng=None, dtype=np.float64):
        self.fc1 = Linear(channels, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype=dtype)
        self.rate = dropout
        self.dropout_rng = dropout_rng

    def forward(self, x: Tensor) -> Tensor:
        h = ops.dropout(ops.relu(self.fc1(x)), self.rate, self.training, self.dropout_rng)
        return self.fc2(h)


class EncoderLayer(Module):
    def __init__(self, cfg: FocusNetConfig, rng, dropout_rng=None, dtype=np.float64):
        c = cfg.channels
        self.self_attn = MultiHeadAttention(cfg.attention, rng, sparse=False, dropout_rng=dropout_rng, dtype=dtype)
        self.norm1 = LayerNorm(c, dtype=dtype)
        self.ffn = FeedForward(c, cfg.ffn_hidden, cfg.attention.dropout, rng, dropout_rng, dtype)
        self.norm2 = LayerNorm(c, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(self.self_attn(x) + x)
        return self.norm2(self.ffn(x) + x)


class DecoderLayer(Module):
    def __init__(self, cfg: FocusNetConfig, rng, dropout_rng=None, dtype=np.float64):
        c = cfg.channels
        self.self_attn = MultiHeadAttention(cfg.attention, rng, sparse=True, dropout_rng=dropout_rng, dtype=dtype)
        self.norm1 = LayerNorm(c, dtype=dtype)
        self.cross_attn = MultiHeadAttention(cfg.attention, rng, sparse=False, dropout_rng=dropout_rng, dtype=dtype)
        self.norm2 = LayerNorm(c, dtype=dtype)
        self.ffn = FeedForward(c, cfg.ffn_hidden, cfg.attention.dropout, rng, dropout_rng, dtype)
        self.norm3 = LayerNorm(c, dtype=dtype)

    def forward(self, y: Tensor, memory: Tensor) -> Tensor:
        x = self.norm1(self.self_attn(y) + y)
        y = self.norm2(self.cross_attn(x, memory, memory) + x)
        return self.norm3(self.ffn(y) + y)


class TargetFocusNet(Module):
    def __init__(self, cfg: FocusNetConfig, rng: np.random.Generator,
                 dropout_rng: Optional[np.random.Generator] = None, dtype=np.float64):
        self.cfg = cfg
        c = cfg.channels
        self.pos_enc = position_encoding(*cfg.template_hw, c).grid.data.astype(dtype)
        self.pos_dec = position_encoding(*cfg.search_hw, c).grid.data.astype(dtype)
        self.encoder = [EncoderLayer(cfg, rng, dropout_rng, dtype) for _ in range(cfg.encoder_layers)]
        self.decoder = [DecoderLayer(cfg, rng, dropout_rng, dtype) for _ in range(cfg.decoder_layers)]

    def _check(self, x: Tensor, hw: tuple, what: str) -> None:
        tokens = hw[0] * hw[1]
        if x.shape[-2:] != (tokens, self.cfg.channels):
            raise DimensionError(f"{what} must be (..., {tokens}, {self.cfg.channels}), got {x.shape}")

    def encode(self, z: Tensor) -> Tensor:
        self._check(z, self.cfg.template_hw, "template features")
        if not self.encoder:
            return z
        y = z + Tensor(self.pos_enc)
        for layer in self.encoder:
            y = layer(y)
        return y

    def decode(self, x: Tensor, memory: Tensor) -> Tensor:
        self._check(x, self.cfg.search_hw, "search features")
        self._check(memory, self.cfg.template_hw, "encoded template")
        y = x + Tensor(self.pos_dec)
        for layer in self.decoder:
            y = layer(y, memory)
        return y

    def forward(self, z: Tensor, x: Tensor) -> Tensor:
        return self.decode(x, self.encode(z))
