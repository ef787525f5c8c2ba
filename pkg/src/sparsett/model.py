"""Siamese tracker: shared conv stem, target focus network, double-head predictor."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import AttentionConfig, record_topk_margins
from .boxes import BBox
from .errors import ConfigError, InputError
from .focusnet import FocusNetConfig, TargetFocusNet
from .labels import STRIDE, GridGeometry, feature_size
from .nn import Conv2d, Linear, Module
from .tensor import Tensor, _sigmoid, clip, exp

FUSIONS = ("mean", "or")


@dataclass
class ModelConfig:
    channels: int = 256
    encoder_layers: int = 2
    decoder_layers: int = 2
    sparseness: int = 32          # 0 keeps every key (dense self-attention)
    heads: int = 8
    ffn_hidden: int = 2048
    conv_blocks: int = 8
    fc_hidden: int = 256
    dropout: float = 0.1
    template_size: int = 127
    search_size: int = 289
    stem_channels: tuple = (32, 64, 128)
    fusion: str = "mean"
    window_influence: float = 0.3
    dtype: str = "float64"

    def __post_init__(self) -> None:
        self.stem_channels = tuple(int(c) for c in self.stem_channels)
        if len(self.stem_channels) != 3:
            raise ConfigError("stem_channels needs three entries")
        if self.conv_blocks < 1:
            raise ConfigError("conv_blocks must be >= 1")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"fusion must be one of {FUSIONS}")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if self.sparseness < 0:
            raise ConfigError("sparseness must be >= 0 (0 = full)")
        if self.channels % 4:
            raise ConfigError("channels must be divisible by 4")
        self.attention_config()  # head divisibility

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def template_hw(self) -> tuple[int, int]:
        n = feature_size(self.template_size)
        return n, n

    @property
    def search_hw(self) -> tuple[int, int]:
        n = feature_size(self.search_size)
        return n, n

    @property
    def effective_sparseness(self) -> int:
        tokens = self.search_hw[0] * self.search_hw[1]
        return tokens if self.sparseness == 0 else self.sparseness

    def attention_config(self) -> AttentionConfig:
        return AttentionConfig(self.channels, self.heads, max(1, self.effective_sparseness), self.dropout)

    def focus_config(self) -> FocusNetConfig:
        return FocusNetConfig(self.encoder_layers, self.decoder_layers, self.attention_config(),
                              self.ffn_hidden, self.template_hw, self.search_hw)

    def geometry(self) -> GridGeometry:
        return GridGeometry.for_crop(self.search_size)


def micro_config(**overrides) -> ModelConfig:
    """Gradient-check sized model: 4x4 template and 6x6 search grids."""
    base = dict(channels=16, encoder_layers=1, decoder_layers=1, sparseness=8, heads=2,
                ffn_hidden=24, conv_blocks=2, fc_hidden=12, dropout=0.0,
                template_size=25, search_size=41, stem_channels=(4, 6, 8))
    base.update(overrides)
    return ModelConfig(**base)


# -- backbone --------------------------------------------------------------

class BackboneStem(Module):
    """Three stride-2 3x3 stages and a stride-1 stage with a projection
    shortcut; 'same' padding maps a crop of n pixels to ceil(n/8) cells."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c1, c2, c3 = cfg.stem_channels
        dt = cfg.np_dtype
        self.conv1 = Conv2d(3, c1, 3, rng, stride=2, padding=1, dtype=dt)
        self.conv2 = Conv2d(c1, c2, 3, rng, stride=2, padding=1, dtype=dt)
        self.conv3 = Conv2d(c2, c3, 3, rng, stride=2, padding=1, dtype=dt)
        self.conv4 = Conv2d(c3, cfg.channels, 3, rng, stride=1, padding=1, dtype=dt)
        self.shortcut = Conv2d(c3, cfg.channels, 1, rng, dtype=dt)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.conv1(x - 0.5))
        h = ops.relu(self.conv2(h))
        h = ops.relu(self.conv3(h))
        return self.conv4(h) + self.shortcut(h)


def to_tokens(fmap: Tensor) -> Tensor:
    b, c, h, w = fmap.shape
    return fmap.reshape(b, c, h * w).transpose(0, 2, 1)


def to_map(tokens: Tensor, hw: tuple[int, int]) -> Tensor:
    b, n, c = tokens.shape
    return tokens.transpose(0, 2, 1).reshape(b, c, hw[0], hw[1])


# -- double-head predictor -------------------------------------------------

class ResidualBlock(Module):
    def __init__(self, c: int, rng, dtype):
        self.conv1 = Conv2d(c, c, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv2d(c, c, 3, rng, padding=1, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return ops.relu(self.conv2(ops.relu(self.conv1(x))) + x)


class BottleneckBlock(Module):
    def __init__(self, c: int, rng, dtype):
        mid = max(1, c // 4)
        self.reduce = Conv2d(c, mid, 1, rng, dtype=dtype)
        self.conv = Conv2d(mid, mid, 3, rng, padding=1, dtype=dtype)
        self.expand = Conv2d(mid, c, 1, rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        h = ops.relu(self.reduce(x))
        h = ops.relu(self.conv(h))
        return ops.relu(self.expand(h) + x)


@dataclass
class PredictionMaps:
    """Raw head outputs over the search grid.

    ``cls_*`` are logits (B, H, W); ``box_*`` are positive (l, t, r, b)
    distances in units of the stride, (B, 4, H, W).
    """

    cls_fc: Tensor
    cls_conv: Tensor
    box_fc: Tensor
    box_conv: Tensor
    stride: int = STRIDE

    def sample(self, i: int = 0) -> "PredictionMaps":
        pick = lambda t: Tensor(t.data[i:i + 1])
        return PredictionMaps(pick(self.cls_fc), pick(self.cls_conv), pick(self.box_fc), pick(self.box_conv),
                              self.stride)


BOX_LOG_CLIP = 6.0


class DoubleHead(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        c, dt = cfg.channels, cfg.np_dtype
        self.hw = cfg.search_hw
        # fc-head: two per-token fully connected layers
        self.fc1 = Linear(c, cfg.fc_hidden, rng, dtype=dt)
        self.fc2 = Linear(cfg.fc_hidden, cfg.fc_hidden, rng, dtype=dt)
        self.fc_cls = Linear(cfg.fc_hidden, 1, rng, dtype=dt)
        self.fc_box = Linear(cfg.fc_hidden, 4, rng, dtype=dt)
        # conv-head: one residual block then L-1 bottlenecks
        self.tower = [ResidualBlock(c, rng, dt)] + [BottleneckBlock(c, rng, dt) for _ in range(cfg.conv_blocks - 1)]
        self.conv_cls = Conv2d(c, 1, 1, rng, dtype=dt)
        self.conv_box = Conv2d(c, 4, 1, rng, dtype=dt)
        # focal-loss prior on the classifiers; box scale near a template-sized target
        prior = -math.log((1 - 0.01) / 0.01)
        box0 = math.log(max(cfg.template_size / (4.0 * STRIDE), 0.5))
        self.fc_cls.bias.data[:] = prior
        self.conv_cls.bias.data[:] = prior
        self.fc_box.bias.data[:] = box0
        self.conv_box.bias.data[:] = box0

    @staticmethod
    def _positive(raw: Tensor) -> Tensor:
        return exp(clip(raw, -BOX_LOG_CLIP, BOX_LOG_CLIP))

    def forward(self, tokens: Tensor) -> PredictionMaps:
        b = tokens.shape[0]
        h, w = self.hw
        f = ops.relu(self.fc1(tokens))
        f = ops.relu(self.fc2(f))
        cls_fc = self.fc_cls(f).reshape(b, h, w)
        box_fc = to_map(self._positive(self.fc_box(f)), self.hw)

        x = to_map(tokens, self.hw)
        for block in self.tower:
            x = block(x)
        cls_conv = self.conv_cls(x).reshape(b, h, w)
        box_conv = self._positive(self.conv_box(x))
        return PredictionMaps(cls_fc, cls_conv, box_fc, box_conv)


class SparseTT(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.backbone = BackboneStem(cfg, rng)
        self.focus = TargetFocusNet(cfg.focus_config(), rng, self.dropout_rng, cfg.np_dtype)
        self.head = DoubleHead(cfg, rng)

    def reseed_dropout(self, seed) -> None:
        self.dropout_rng.bit_generator.state = np.random.default_rng(seed).bit_generator.state

    def _as_input(self, crop, size: int) -> Tensor:
        x = crop if isinstance(crop, Tensor) else Tensor(np.asarray(crop, dtype=self.cfg.np_dtype))
        if x.ndim == 3:
            x = x.reshape((1,) + x.shape)
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2:] != (size, size):
            raise InputError(f"expected 3 x {size} x {size} crop(s), got {x.shape}")
        return x

    def extract_features(self, crop) -> Tensor:
        """Crop(s) of t x t or s x s pixels -> (B, HW, C) tokens."""
        x = crop if isinstance(crop, Tensor) else Tensor(np.asarray(crop, dtype=self.cfg.np_dtype))
        size = x.shape[-1]
        if size not in (self.cfg.template_size, self.cfg.search_size):
            raise InputError(f"crop size {size} is neither the template ({self.cfg.template_size}) "
                             f"nor the search ({self.cfg.search_size}) size")
        return to_tokens(self.backbone(self._as_input(x, size)))

    def encode_template(self, template) -> Tensor:
        return self.focus.encode(self.extract_features(self._as_input(template, self.cfg.template_size)))

    def predict(self, search_tokens: Tensor) -> PredictionMaps:
        return self.head(search_tokens)

    def forward_search(self, search, memory: Tensor) -> PredictionMaps:
        x = self.extract_features(self._as_input(search, self.cfg.search_size))
        return self.predict(self.focus.decode(x, memory))

    def forward(self, template, search) -> PredictionMaps:
        return self.forward_search(search, self.encode_template(template))


# -- inference fusion --------------------------------------------------------

def fused_scores(maps: PredictionMaps, fusion: str = "mean") -> np.ndarray:
    """Per-location foreground probability from both classifiers."""
    s_fc = _sigmoid(np.asarray(maps.cls_fc.data, dtype=np.float64))
    s_conv = _sigmoid(np.asarray(maps.cls_conv.data, dtype=np.float64))
    if fusion == "mean":
        return 0.5 * (s_fc + s_conv)
    if fusion == "or":
        return s_fc + s_conv * (1.0 - s_fc)
    raise ConfigError(f"unknown fusion {fusion!r}")


def cosine_window(n: int) -> np.ndarray:
    w = np.hanning(n)
    return np.outer(w, w)


@dataclass
class Selection:
    box: BBox
    score: float
    location: tuple[int, int]


def fuse_and_select(maps: PredictionMaps, geometry: GridGeometry, fusion: str = "mean",
                    window_influence: float = 0.0) -> Selection:
    """Pick the best location from fused classification scores and decode
    its box from the conv-head offsets only (the fc-head box map is never read)."""
    fused = fused_scores(maps, fusion)[0]
    ranked = fused
    if window_influence > 0:
        ranked = (1.0 - window_influence) * fused + window_influence * cosine_window(fused.shape[0])
    flat = int(np.argmax(ranked))  # first maximum in row-major order
    iy, ix = divmod(flat, ranked.shape[1])
    c = geometry.centers()
    l, t, r, b = np.asarray(maps.box_conv.data[0, :, iy, ix], dtype=np.float64) * maps.stride
    cx, cy = c[ix], c[iy]
    return Selection(BBox(cx - l, cy - t, cx + r, cy + b), float(fused[iy, ix]), (iy, ix))


def gradcheck_cases():
    from .losses import combined_loss, focal_loss, iou_loss

    def c_model(rng):
        cfg = micro_config()
        for attempt in range(50):
            model = SparseTT(cfg, seed=int(rng.integers(1 << 30)))
            model.eval()
            z = Tensor(rng.uniform(0, 1, (1, 3, cfg.template_size, cfg.template_size)))
            x = Tensor(rng.uniform(0, 1, (1, 3, cfg.search_size, cfg.search_size)))
            with record_topk_margins() as gaps:
                model(z, x)
            if min(gaps) > 1e-3:
                break
        h, w = cfg.search_hw
        labels = np.zeros((1, h, w))
        labels[0, 2:4, 2:4] = 1
        targets = rng.uniform(1.0, 3.0, (1, 4, h, w))
        mask = labels > 0

        def fn():
            m = model(z, x)
            return combined_loss(
                focal_loss(m.cls_fc, labels), iou_loss(m.box_fc, targets, mask),
                focal_loss(m.cls_conv, labels), iou_loss(m.box_conv, targets, mask),
            )

        return fn, [z, x] + model.parameters()

    return {"full_model_micro": c_model}
