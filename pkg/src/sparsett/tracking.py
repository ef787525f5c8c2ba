"""Sequential tracking loop and GOT-10k style metrics (AO, SR_0.5, SR_0.75)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxes import BBox, box_iou
from .errors import InputError
from .labels import context_side, crop_square, box_from_crop
from .model import PredictionMaps, SparseTT, fuse_and_select
from .tensor import no_grad

THRESHOLDS = np.round(np.arange(21) * 0.05, 10)


def success_rate(ious, tau: float) -> float:
    ious = np.asarray(ious, dtype=np.float64)
    return float((ious > tau).mean()) if ious.size else 0.0


@dataclass
class TrackMetrics:
    ious: np.ndarray

    @property
    def ao(self) -> float:
        return float(np.mean(self.ious)) if len(self.ious) else 0.0

    @property
    def sr50(self) -> float:
        return success_rate(self.ious, 0.5)

    @property
    def sr75(self) -> float:
        return success_rate(self.ious, 0.75)

    def success_curve(self, thresholds=THRESHOLDS) -> np.ndarray:
        return np.array([success_rate(self.ious, t) for t in thresholds])

    @property
    def auc(self) -> float:
        return float(self.success_curve().mean())


@dataclass
class TrackStep:
    box: BBox
    score: float
    maps: Optional[PredictionMaps] = None
    crop_center: tuple = (0.0, 0.0)
    crop_scale: float = 1.0


@dataclass
class TrackResult:
    boxes: np.ndarray                 # (T, 4) predictions; frame 0 is the init box
    scores: np.ndarray
    ious: Optional[np.ndarray] = None  # per frame vs ground truth when available
    steps: list = field(default_factory=list)

    @property
    def metrics(self) -> TrackMetrics:
        if self.ious is None:
            raise InputError("no ground truth to score against")
        # the initialisation frame is given, not predicted
        return TrackMetrics(self.ious[1:])


class SparseTTTracker:
    """Template cropped once; each search crop covers s/t times the
    context square around the previous estimate."""

    def __init__(self, model: SparseTT, window_influence: Optional[float] = None,
                 fusion: Optional[str] = None, size_rate: float = 0.7, keep_maps: bool = False):
        self.model = model
        cfg = model.cfg
        self.window_influence = cfg.window_influence if window_influence is None else window_influence
        self.fusion = cfg.fusion if fusion is None else fusion
        self.size_rate = size_rate
        self.keep_maps = keep_maps
        self.geometry = cfg.geometry()

    def init(self, image: np.ndarray, box: BBox) -> None:
        if not (box.width > 0 and box.height > 0):
            raise InputError(f"degenerate init box {box}")
        cfg = self.model.cfg
        self.model.eval()
        template = crop_square(image, box.center, context_side(box.width, box.height), cfg.template_size)
        with no_grad():
            self.memory = self.model.encode_template(template.transpose(2, 0, 1))
        self.center = box.center
        self.size = (box.width, box.height)
        self.frame_hw = image.shape[:2]

    def update(self, image: np.ndarray) -> TrackStep:
        cfg = self.model.cfg
        w, h = self.size
        side = context_side(w, h) * cfg.search_size / cfg.template_size
        scale = cfg.search_size / side
        search = crop_square(image, self.center, side, cfg.search_size)
        with no_grad():
            maps = self.model.forward_search(search.transpose(2, 0, 1), self.memory)
        sel = fuse_and_select(maps, self.geometry, self.fusion, self.window_influence)
        pred = box_from_crop(sel.box, self.center, scale, cfg.search_size)

        rate = self.size_rate
        nw = (1 - rate) * w + rate * pred.width
        nh = (1 - rate) * h + rate * pred.height
        H, W = self.frame_hw
        cx = float(np.clip(pred.center[0], 0, W))
        cy = float(np.clip(pred.center[1], 0, H))
        nw = float(np.clip(nw, 4.0, W))
        nh = float(np.clip(nh, 4.0, H))
        step = TrackStep(BBox.from_center(cx, cy, nw, nh), sel.score, maps if self.keep_maps else None,
                         self.center, scale)
        self.center, self.size = (cx, cy), (nw, nh)
        return step


class OracleTracker:
    """Replays ground truth; checks the scoring plumbing."""

    def __init__(self, boxes: Sequence[BBox]):
        self.boxes = list(boxes)
        self.i = 0

    def init(self, image, box: BBox) -> None:
        if not (box.width > 0 and box.height > 0):
            raise InputError(f"degenerate init box {box}")
        self.i = 0

    def update(self, image) -> TrackStep:
        self.i += 1
        return TrackStep(self.boxes[self.i], 1.0)


def run_tracker(tracker, frames: Sequence[np.ndarray], init_box: BBox,
                gt_boxes: Optional[np.ndarray] = None, keep_steps: bool = False) -> TrackResult:
    if len(frames) == 0:
        raise InputError("empty sequence")
    tracker.init(frames[0], init_box)
    boxes = [init_box.as_array()]
    scores = [1.0]
    steps = []
    for frame in frames[1:]:
        st = tracker.update(frame)
        boxes.append(st.box.as_array())
        scores.append(st.score)
        if keep_steps:
            steps.append(st)
    boxes = np.asarray(boxes)
    ious = None
    if gt_boxes is not None:
        gt = np.asarray(gt_boxes, dtype=np.float64)[: len(boxes)]
        ious = box_iou(boxes, gt)
    return TrackResult(boxes, np.asarray(scores), ious, steps)


def track_sequence(model: SparseTT, frames, init_box: BBox, gt_boxes=None, **tracker_kw) -> TrackResult:
    return run_tracker(SparseTTTracker(model, **tracker_kw), frames, init_box, gt_boxes)
