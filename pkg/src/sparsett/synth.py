"""Deterministic synthetic tracking sequences.

All pixel placement uses integer arithmetic (waypoint interpolation, size
profiles, shape tests), so a spec renders identically on every platform.
Ground-truth boxes bound the full target mask even where an occluder hides
part of it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import cv2
import numpy as np

from .boxes import BBox
from .errors import InputError, SpecError

SHAPES = ("ellipse", "rectangle", "diamond")


@dataclass(frozen=True)
class Occluder:
    """Bar sliding over the target from its left edge.

    Coverage (percent of the target's width) ramps linearly from 0 at
    ``start`` to ``max_coverage`` at ``peak`` and back to 0 at ``end``.
    """

    start: int
    peak: int
    end: int
    max_coverage: int
    color: tuple = (90, 90, 90)

    def coverage(self, f: int) -> int:
        if f <= self.start or f >= self.end:
            return 0
        if f <= self.peak:
            return self.max_coverage * (f - self.start) // max(1, self.peak - self.start)
        return self.max_coverage * (self.end - f) // max(1, self.end - self.peak)


@dataclass(frozen=True)
class SceneSpec:
    name: str = "scene"
    canvas: int = 256
    n_frames: int = 120
    shape: str = "ellipse"
    color: tuple = (210, 60, 50)
    texture: int = 18
    size: tuple = (32, 28)                 # base (w, h) in pixels
    waypoints: tuple = ((64, 64), (192, 128), (96, 192))
    scale: tuple = (1000, 1000)            # per-mille at first and last frame
    deform: int = 0                        # per-mille aspect swing
    deform_period: int = 40
    occluders: tuple = ()
    distractors: int = 0
    clutter: int = 12
    background: tuple = (118, 112, 105)
    noise: int = 3
    seed: int = 0


@dataclass
class SyntheticSequence:
    name: str
    images: np.ndarray        # (T, H, W, 3) uint8
    boxes: np.ndarray         # (T, 4) x_min, y_min, x_max, y_max
    attributes: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    def frame(self, i: int) -> np.ndarray:
        return self.images[i].astype(np.float32) / 255.0

    def box(self, i: int) -> BBox:
        return BBox(*(float(v) for v in self.boxes[i]))

    def bboxes(self) -> list[BBox]:
        return [self.box(i) for i in range(len(self))]


def _shape_mask(shape: str, w: int, h: int, inner: bool = False) -> np.ndarray:
    """Integer half-plane/quadric tests on pixel centers; ``inner`` shrinks to 60 %."""
    i = np.arange(w, dtype=np.int64)[None, :]
    j = np.arange(h, dtype=np.int64)[:, None]
    dx = np.abs(2 * i + 1 - w)
    dy = np.abs(2 * j + 1 - h)
    num, den = (3, 5) if inner else (1, 1)
    if shape == "ellipse":
        lhs = (dx * h) ** 2 + (dy * w) ** 2
        return lhs * den * den <= (w * h) ** 2 * num * num
    if shape == "rectangle":
        return (dx * den <= w * num) & (dy * den <= h * num)
    if shape == "diamond":
        return (dx * h + dy * w) * den <= w * h * num
    raise SpecError(f"unknown shape {shape!r}")


def _interp_path(waypoints, f: int, n_frames: int) -> tuple[int, int]:
    segs = len(waypoints) - 1
    if segs == 0 or n_frames == 1:
        return tuple(waypoints[0])
    span = n_frames - 1
    u = f * segs
    k = min(u // span, segs - 1)
    rem = u - k * span
    (x0, y0), (x1, y1) = waypoints[k], waypoints[k + 1]
    return x0 + (x1 - x0) * rem // span, y0 + (y1 - y0) * rem // span


def _triangle(f: int, period: int) -> int:
    """Triangle wave in per-mille, range [-1000, 1000]."""
    phase = f % period
    return 4000 * min(phase, period - phase) // period - 1000


def _target_size(spec: SceneSpec, f: int) -> tuple[int, int, int, int]:
    span = max(1, spec.n_frames - 1)
    s0, s1 = spec.scale
    sc = s0 + (s1 - s0) * f // span
    d = spec.deform * _triangle(f, spec.deform_period) // 1000 if spec.deform else 0
    w = max(2, spec.size[0] * sc * (1000 + d) // 1_000_000)
    h = max(2, spec.size[1] * sc // (1000 + d))
    return w, h, sc, d


def _paint(canvas: np.ndarray, x0: int, y0: int, mask: np.ndarray, colors: np.ndarray) -> np.ndarray:
    """Write ``colors`` where ``mask`` is set; returns the canvas-clipped mask."""
    hgt, wid = canvas.shape[:2]
    h, w = mask.shape
    cx0, cy0 = max(x0, 0), max(y0, 0)
    cx1, cy1 = min(x0 + w, wid), min(y0 + h, hgt)
    placed = np.zeros((hgt, wid), dtype=bool)
    if cx1 <= cx0 or cy1 <= cy0:
        return placed
    sub = mask[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0]
    region = canvas[cy0:cy1, cx0:cx1]
    region[sub] = colors[cy0 - y0:cy1 - y0, cx0 - x0:cx1 - x0][sub]
    placed[cy0:cy1, cx0:cx1] = sub
    return placed


def _textured(shape: str, w: int, h: int, color, tile: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = _shape_mask(shape, w, h)
    core = _shape_mask(shape, w, h, inner=True)
    th, tw = tile.shape[:2]
    rows = (np.arange(h) * th) // h
    cols = (np.arange(w) * tw) // w
    tex = tile[rows][:, cols]
    base = np.asarray(color, dtype=np.int32)
    colors = base[None, None, :] + tex
    colors = np.where(core[..., None], colors, colors * 11 // 20)
    return mask, colors


def render_sequence(spec: SceneSpec) -> SyntheticSequence:
    """Render frames, tight ground-truth boxes and per-frame attributes."""
    if spec.shape not in SHAPES:
        raise SpecError(f"unknown shape {spec.shape!r}")
    n = spec.canvas
    s_max = max(spec.scale)
    if max(spec.size) * s_max * (1000 + spec.deform) // 1_000_000 > n:
        raise SpecError("target larger than canvas")
    for x, y in spec.waypoints:
        if not (0 <= x < n and 0 <= y < n):
            raise SpecError(f"waypoint {(x, y)} outside the {n}x{n} canvas")

    rng = np.random.default_rng([spec.seed, 7])
    bg = np.empty((n, n, 3), dtype=np.int32)
    bg[:] = np.asarray(spec.background, dtype=np.int32)
    bg += rng.integers(-6, 7, size=(n, n, 1))
    for _ in range(spec.clutter):
        bw, bh = (int(v) for v in rng.integers(8, 48, size=2))
        bx, by = (int(v) for v in rng.integers(-8, n, size=2))
        tint = np.asarray(spec.background) + rng.integers(-28, 29, size=3)
        blob = _shape_mask(SHAPES[int(rng.integers(0, 2))], bw, bh)
        _paint(bg, bx, by, blob, np.broadcast_to(tint, (bh, bw, 3)).astype(np.int32))

    tile = rng.integers(-spec.texture, spec.texture + 1, size=(24, 24, 1)) if spec.texture else np.zeros((24, 24, 1), np.int64)
    tile = np.repeat(tile, 3, axis=2).astype(np.int32)

    distractors = []
    for _ in range(spec.distractors):
        start = rng.integers(24, n - 24, size=2)
        vel = rng.integers(-3, 4, size=2)
        tint = np.clip(np.asarray(spec.color) + rng.integers(-30, 31, size=3), 0, 255)
        distractors.append((start, vel, tint))

    images = np.empty((spec.n_frames, n, n, 3), dtype=np.uint8)
    boxes = np.empty((spec.n_frames, 4), dtype=np.float64)
    attrs = []
    for f in range(spec.n_frames):
        img = bg.copy()
        w, h, sc, d = _target_size(spec, f)
        for start, vel, tint in distractors:
            # bounce inside the canvas
            pos = []
            for a in range(2):
                lo, hi = 16, n - 16
                period = 2 * (hi - lo)
                p = (int(start[a]) - lo + int(vel[a]) * f) % period
                pos.append(lo + (p if p < hi - lo else period - p))
            dm, dc = _textured(spec.shape, w, h, tint, tile)
            _paint(img, pos[0] - w // 2, pos[1] - h // 2, dm, dc)

        cx, cy = _interp_path(spec.waypoints, f, spec.n_frames)
        x0, y0 = cx - w // 2, cy - h // 2
        mask, colors = _textured(spec.shape, w, h, spec.color, tile)
        placed = _paint(img, x0, y0, mask, colors)
        ys, xs = np.nonzero(placed)
        if len(xs) == 0:
            raise SpecError(f"target left the canvas at frame {f}")
        box = (xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
        boxes[f] = box

        occluded = np.zeros_like(placed)
        for occ in spec.occluders:
            pct = occ.coverage(f)
            if pct <= 0:
                continue
            cols = -(-(box[2] - box[0]) * pct // 100)
            ox0, oy0 = box[0], max(0, box[1] - 2)
            bar = np.ones((min(n, box[3] + 2) - oy0, cols), dtype=bool)
            occluded |= _paint(img, ox0, oy0, bar, np.broadcast_to(np.asarray(occ.color, np.int32), bar.shape + (3,)))
        occ_frac = float((occluded & placed).sum()) / float(placed.sum())

        if spec.noise:
            img += np.random.default_rng([spec.seed, 11, f]).integers(-spec.noise, spec.noise + 1, size=img.shape)
        images[f] = np.clip(img, 0, 255).astype(np.uint8)
        attrs.append({
            "frame": f,
            "scale": sc / 1000.0,
            "aspect": (box[2] - box[0]) / (box[3] - box[1]),
            "occlusion": occ_frac,
        })
    return SyntheticSequence(spec.name, images, boxes, attrs)


# -- presets -------------------------------------------------------------

SUITE_NAMES = ("easy-linear", "scale-2x", "deform-osc", "occlude-40", "distractor-3")


def make_preset(name: str, seed: int = 0, n_frames: int = 120, canvas: int = 256) -> SceneSpec:
    """Named challenge preset; ``seed`` varies colors, path and clutter."""
    if name not in SUITE_NAMES:
        raise InputError(f"unknown suite {name!r}; choose from {', '.join(SUITE_NAMES)}")
    rng = np.random.default_rng([SUITE_NAMES.index(name), seed])
    lo, hi = canvas * 3 // 16, canvas * 13 // 16
    waypoints = tuple(tuple(int(v) for v in rng.integers(lo, hi, size=2)) for _ in range(3))
    hue = rng.integers(0, 3)
    color = [int(v) for v in rng.integers(30, 90, size=3)]
    color[hue] = int(rng.integers(190, 250))
    background = tuple(int(v) for v in rng.integers(95, 140, size=3))
    base = SceneSpec(
        name=name, canvas=canvas, n_frames=n_frames,
        shape=SHAPES[int(rng.integers(0, len(SHAPES)))],
        color=tuple(color), size=(int(rng.integers(28, 37)), int(rng.integers(26, 35))),
        waypoints=waypoints, background=background, seed=int(rng.integers(1 << 31)),
    )
    if name == "scale-2x":
        return replace(base, size=(base.size[0] * 2 // 3, base.size[1] * 2 // 3), scale=(1000, 2000))
    if name == "deform-osc":
        return replace(base, deform=350, deform_period=40)
    if name == "occlude-40":
        third = n_frames // 3
        return replace(base, occluders=(Occluder(third, third + 15, third + 30, 55),
                                        Occluder(2 * third, 2 * third + 12, 2 * third + 24, 45)))
    if name == "distractor-3":
        return replace(base, distractors=3)
    return base


def standard_suites(seed: int = 0) -> list[SceneSpec]:
    return [make_preset(name, seed) for name in SUITE_NAMES]


# -- sequence directories --------------------------------------------------

def write_sequence(seq: SyntheticSequence, directory: str | Path) -> Path:
    """numbered PNGs + groundtruth.txt (x,y,w,h) + attributes.csv"""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(seq.images):
        cv2.imwrite(str(d / f"{i + 1:08d}.png"), cv2.cvtColor(img, cv2.COLOR_RGB2BGR))
    with open(d / "groundtruth.txt", "w") as fh:
        for x0, y0, x1, y1 in seq.boxes:
            fh.write(f"{x0:.4f},{y0:.4f},{x1 - x0:.4f},{y1 - y0:.4f}\n")
    if seq.attributes:
        with open(d / "attributes.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(seq.attributes[0]))
            writer.writeheader()
            writer.writerows(seq.attributes)
    return d


def read_boxes(path: str | Path) -> np.ndarray:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        x, y, w, h = (float(v) for v in line.replace("\t", ",").split(",")[:4])
        rows.append((x, y, x + w, y + h))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def read_sequence(directory: str | Path, name: Optional[str] = None) -> SyntheticSequence:
    d = Path(directory)
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg", ".bmp"))
    if not files:
        raise InputError(f"no image files in {d}")
    images = np.stack([cv2.cvtColor(cv2.imread(str(p), cv2.IMREAD_COLOR), cv2.COLOR_BGR2RGB) for p in files])
    gt = d / "groundtruth.txt"
    boxes = read_boxes(gt) if gt.exists() else np.full((len(files), 4), np.nan)
    return SyntheticSequence(name or d.name, images, boxes)
