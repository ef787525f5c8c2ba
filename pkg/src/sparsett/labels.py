"""Training labels, augmentation ranges, crops and template/search pair sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import cv2
import numpy as np

from .boxes import BBox
from .errors import InputError

STRIDE = 8
MAX_FRAME_GAP = 100
# box coordinates are snapped to this dyadic grid so that
# center - offset reproduces them exactly in float64
SNAP = 2.0 ** -16


@dataclass(frozen=True)
class GridGeometry:
    """Feature-cell centers of a square search crop, in crop pixels."""

    crop_size: int
    cells: int
    stride: int = STRIDE

    @classmethod
    def for_crop(cls, crop_size: int, stride: int = STRIDE) -> "GridGeometry":
        return cls(crop_size, feature_size(crop_size), stride)

    @property
    def offset(self) -> float:
        return (self.crop_size - self.stride * (self.cells - 1)) / 2.0

    def centers(self) -> np.ndarray:
        return self.stride * np.arange(self.cells) + self.offset


def feature_size(crop_size: int, stages: int = 3) -> int:
    """Spatial extent after ``stages`` stride-2 'same' convolutions."""
    n = crop_size
    for _ in range(stages):
        n = -(-n // 2)
    return n


@dataclass
class LabelMaps:
    cls: np.ndarray            # (H, W) in {0, 1}
    box_targets: np.ndarray    # (4, H, W) l, t, r, b in crop pixels; zero off positives
    gt_box: BBox               # the (snapped) box the targets encode
    geometry: GridGeometry

    @property
    def positives(self) -> np.ndarray:
        return self.cls > 0

    def normalized_targets(self) -> np.ndarray:
        return self.box_targets / self.geometry.stride


def snap(v: float) -> float:
    return round(v / SNAP) * SNAP


def generate_labels(gt_box: BBox, geometry: GridGeometry, shrink: float = 0.5) -> LabelMaps:
    """Positive cells are those whose center lies in the box shrunk about its
    center to ``shrink`` of its size.  If none qualifies, the cell nearest the
    box center is positive (that cell can sit outside a box smaller than one
    stride, giving a negative offset)."""
    box = BBox(snap(gt_box.x_min), snap(gt_box.y_min), snap(gt_box.x_max), snap(gt_box.y_max))
    if box.width <= 0 or box.height <= 0:
        raise InputError(f"degenerate ground-truth box {gt_box}")
    c = geometry.centers()
    bx, by = box.center
    hw, hh = box.width * shrink / 2, box.height * shrink / 2
    in_x = (c >= bx - hw) & (c <= bx + hw)
    in_y = (c >= by - hh) & (c <= by + hh)
    cls = (in_y[:, None] & in_x[None, :]).astype(np.uint8)
    if not cls.any():
        ix, iy = int(np.abs(c - bx).argmin()), int(np.abs(c - by).argmin())
        cls[iy, ix] = 1
    cy, cx = np.meshgrid(c, c, indexing="ij")
    targets = np.stack([cx - box.x_min, cy - box.y_min, box.x_max - cx, box.y_max - cy])
    targets *= cls[None]
    return LabelMaps(cls, targets, box, geometry)


def decode_offsets(cx, cy, offsets) -> np.ndarray:
    """(l, t, r, b) at cell center -> (x_min, y_min, x_max, y_max)."""
    l, t, r, b = offsets
    return np.array([cx - l, cy - t, cx + r, cy + b])


# -- augmentation ----------------------------------------------------------

@dataclass(frozen=True)
class AugmentParams:
    alpha: float = 0.3
    translation: float = 0.2
    template_size: int = 127
    search_size: int = 289

    @property
    def scale_range(self) -> tuple[float, float]:
        return 1.0 / (1.0 + self.alpha), 1.0 + self.alpha


def context_side(w: float, h: float) -> float:
    """Side of the square template context around a w x h target."""
    return math.sqrt((1.5 * w + 0.5 * h) * (1.5 * h + 0.5 * w))


def beta_template(w_t: float, h_t: float) -> float:
    return context_side(w_t, h_t)


def beta_search(w_s: float, h_s: float, template_size: int = 127, search_size: int = 289) -> float:
    return template_size * search_size / context_side(w_s, h_s)


def sample_augmentation(w: float, h: float, role: str, rng: np.random.Generator,
                        params: AugmentParams = AugmentParams()) -> tuple[float, float, float]:
    """(scale, dx, dy): scale uniform in [1/(1+α), 1+α], shifts uniform in ±0.2β."""
    if w <= 0 or h <= 0:
        raise InputError("target size must be positive")
    if role == "template":
        beta = beta_template(w, h)
    elif role == "search":
        beta = beta_search(w, h, params.template_size, params.search_size)
    else:
        raise ValueError(f"role must be 'template' or 'search', got {role!r}")
    lo, hi = params.scale_range
    scale = rng.uniform(lo, hi)
    r = params.translation * beta
    dx, dy = rng.uniform(-r, r, size=2)
    return float(scale), float(dx), float(dy)


# -- cropping --------------------------------------------------------------

def crop_square(image: np.ndarray, center: tuple[float, float], side: float, out_size: int) -> np.ndarray:
    """Resample the square of ``side`` image pixels around ``center`` to
    ``out_size`` pixels.  Out-of-frame area is filled with the mean color.

    ``image`` is (H, W, 3); the result is float32 (out, out, 3) in [0, 1].
    """
    img = image.astype(np.float32) / 255.0 if image.dtype == np.uint8 else image.astype(np.float32)
    scale = out_size / side
    cx, cy = center
    # cv2 uses integer pixel centers; our continuous frame puts them at +0.5
    inv = np.array([
        [1.0 / scale, 0.0, cx + (0.5 - out_size / 2) / scale - 0.5],
        [0.0, 1.0 / scale, cy + (0.5 - out_size / 2) / scale - 0.5],
    ])
    fill = tuple(float(v) for v in img.reshape(-1, 3).mean(axis=0))
    return cv2.warpAffine(img, inv, (out_size, out_size), flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=fill)


def box_to_crop(box: BBox, center: tuple[float, float], scale: float, out_size: int) -> BBox:
    cx, cy = center
    half = out_size / 2
    return BBox((box.x_min - cx) * scale + half, (box.y_min - cy) * scale + half,
                (box.x_max - cx) * scale + half, (box.y_max - cy) * scale + half)


def box_from_crop(box: BBox, center: tuple[float, float], scale: float, out_size: int) -> BBox:
    cx, cy = center
    half = out_size / 2
    return BBox((box.x_min - half) / scale + cx, (box.y_min - half) / scale + cy,
                (box.x_max - half) / scale + cx, (box.y_max - half) / scale + cy)


def template_crop(image: np.ndarray, box: BBox, template_size: int) -> np.ndarray:
    side = context_side(box.width, box.height)
    return crop_square(image, box.center, side, template_size)


# -- pair sampling ---------------------------------------------------------

@dataclass
class TrainingSample:
    template: np.ndarray   # (3, t, t)
    search: np.ndarray     # (3, s, s)
    labels: LabelMaps
    search_box: BBox       # target box in search-crop pixels
    frames: tuple[int, int]
    w_t: float
    h_t: float
    w_s: float
    h_s: float
    alpha: float
    beta_template: float
    beta_search: float


def sample_frame_pair(length: int, rng: np.random.Generator, max_gap: int = MAX_FRAME_GAP) -> tuple[int, int]:
    """Uniform over ordered pairs (i, j) with |i - j| <= max_gap."""
    if length < 1:
        raise InputError("sequence must contain at least one frame")
    if length == 1:
        return 0, 0
    while True:
        i, j = (int(v) for v in rng.integers(0, length, size=2))
        if abs(i - j) <= max_gap:
            return i, j


def sample_pair(images: Sequence[np.ndarray], boxes: Sequence[BBox], rng: np.random.Generator,
                params: AugmentParams = AugmentParams(), augment_template: bool = True,
                max_gap: int = MAX_FRAME_GAP) -> TrainingSample:
    """Template from frame i, jittered search region from frame j."""
    i, j = sample_frame_pair(len(images), rng, max_gap)
    t, s = params.template_size, params.search_size

    bt = boxes[i]
    side_t = context_side(bt.width, bt.height)
    center_t = bt.center
    if augment_template:
        sc, dx, dy = sample_augmentation(bt.width, bt.height, "template", rng, params)
        side_t *= sc
        center_t = (center_t[0] + dx, center_t[1] + dy)
    template = crop_square(images[i], center_t, side_t, t)

    bs = boxes[j]
    side_s = context_side(bs.width, bs.height) * s / t
    w_s, h_s = bs.width * s / side_s, bs.height * s / side_s
    sc, dx, dy = sample_augmentation(w_s, h_s, "search", rng, params)
    side_s *= sc
    scale = s / side_s
    cx, cy = bs.center
    # shifting the crop window by -d moves the target by +d in the crop
    center_s = (cx - dx / scale, cy - dy / scale)
    search = crop_square(images[j], center_s, side_s, s)
    box_in_crop = box_to_crop(bs, center_s, scale, s)
    labels = generate_labels(box_in_crop, GridGeometry.for_crop(s))

    return TrainingSample(
        template=np.ascontiguousarray(template.transpose(2, 0, 1)),
        search=np.ascontiguousarray(search.transpose(2, 0, 1)),
        labels=labels,
        search_box=labels.gt_box,
        frames=(i, j),
        w_t=bt.width, h_t=bt.height, w_s=w_s, h_s=h_s,
        alpha=params.alpha,
        beta_template=beta_template(bt.width, bt.height),
        beta_search=beta_search(w_s, h_s, t, s),
    )
