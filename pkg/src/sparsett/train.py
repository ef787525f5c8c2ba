"""Deterministic toy training: seeded pair stream, AdamW, CSV log, epoch checkpoints."""

from __future__ import annotations

import csv
import hashlib
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import checkpoint
from .config import RunConfig, parse_config, serialize_config
from .errors import NonFiniteError
from .labels import AugmentParams, TrainingSample, sample_pair
from .losses import combined_loss, focal_loss, iou_loss
from .model import SparseTT
from .optim import AdamW
from .synth import SyntheticSequence, make_preset, render_sequence
from .tensor import Tape, backward

LOG_FIELDS = ("step", "epoch", "total", "fc_cls", "fc_box", "conv_cls", "conv_box", "lr")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, last_checkpoint: Optional[Path]):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def build_sequences(cfg: RunConfig) -> list[SyntheticSequence]:
    d = cfg.data
    return [render_sequence(make_preset(name, seed, d.frames, d.canvas))
            for name in d.suites for seed in d.suite_seeds]


@dataclass
class Batch:
    template: np.ndarray   # (B, 3, t, t)
    search: np.ndarray     # (B, 3, s, s)
    cls: np.ndarray        # (B, H, W)
    targets: np.ndarray    # (B, 4, H, W) in stride units
    samples: list = field(default_factory=list)

    @property
    def mask(self) -> np.ndarray:
        return self.cls > 0

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.template, self.search, self.cls, self.targets):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


def collate(samples: Sequence[TrainingSample], dtype=np.float64) -> Batch:
    return Batch(
        template=np.stack([s.template for s in samples]).astype(dtype),
        search=np.stack([s.search for s in samples]).astype(dtype),
        cls=np.stack([s.labels.cls for s in samples]).astype(np.float64),
        targets=np.stack([s.labels.normalized_targets() for s in samples]),
        samples=list(samples),
    )


class PairStream:
    """Training pairs in an order fixed by the seed.

    With ``data.fixed_pairs`` a pool is drawn once and each epoch visits a
    seeded permutation of it; otherwise every epoch draws fresh pairs.
    """

    def __init__(self, sequences: Sequence[SyntheticSequence], cfg: RunConfig):
        self.sequences = list(sequences)
        self.boxes = [seq.bboxes() for seq in self.sequences]
        self.cfg = cfg
        d, m = cfg.data, cfg.model
        self.params = AugmentParams(d.alpha, d.translation, m.template_size, m.search_size)
        self.rng = np.random.default_rng([cfg.seed, 2])
        self.pool = [self._draw() for _ in range(d.fixed_pairs)] if d.fixed_pairs else None

    def _draw(self) -> TrainingSample:
        k = int(self.rng.integers(len(self.sequences)))
        return sample_pair(self.sequences[k].images, self.boxes[k], self.rng, self.params,
                           self.cfg.data.augment_template, self.cfg.data.max_gap)

    def epoch(self, e: int) -> list[list[TrainingSample]]:
        d = self.cfg.data
        if self.pool is not None:
            order = []
            perm_rng = np.random.default_rng([self.cfg.seed, 3, e])
            while len(order) < d.pairs_per_epoch:
                order.extend(perm_rng.permutation(len(self.pool)).tolist())
            items = [self.pool[i] for i in order[: d.pairs_per_epoch]]
        else:
            items = [self._draw() for _ in range(d.pairs_per_epoch)]
        return [items[i:i + d.batch_size] for i in range(0, len(items), d.batch_size)]


def compute_losses(model: SparseTT, batch: Batch, cfg: RunConfig):
    """(total Tensor, {component: float}); call inside a Tape to train."""
    maps = model(batch.template, batch.search)
    mask = batch.mask
    parts = {
        "fc_cls": focal_loss(maps.cls_fc, batch.cls),
        "fc_box": iou_loss(maps.box_fc, batch.targets, mask),
        "conv_cls": focal_loss(maps.cls_conv, batch.cls),
        "conv_box": iou_loss(maps.box_conv, batch.targets, mask),
    }
    total = combined_loss(parts["fc_cls"], parts["fc_box"], parts["conv_cls"], parts["conv_box"], cfg.loss)
    return total, {k: float(v.item()) for k, v in parts.items()}, maps


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def save_model(model: SparseTT, cfg: RunConfig, path: str | Path) -> None:
    checkpoint.save(path, model.state_dict(), serialize_config(cfg))


def load_model(path: str | Path) -> tuple[SparseTT, RunConfig]:
    tensors, text = checkpoint.load(path)
    if text is None:
        raise checkpoint.CheckpointError(f"{path} carries no run configuration")
    cfg = parse_config(text)
    model = SparseTT(cfg.model, seed=cfg.seed)
    model.load_state_dict(tensors)
    model.eval()
    return model, cfg


@dataclass
class TrainResult:
    model: SparseTT
    log_path: Path
    checkpoints: list
    rows: list
    first_batch_digest: str


def train(cfg: RunConfig, out_dir: str | Path, sequences: Optional[Sequence[SyntheticSequence]] = None,
          max_steps: Optional[int] = None, progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train per ``cfg``; writes ``train_log.csv`` and ``epoch_NNN.ckpt``/``last.ckpt``.

    A non-finite loss stops training with :class:`TrainingAborted`; the
    checkpoints written so far are left untouched.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sequences = build_sequences(cfg) if sequences is None else sequences
    stream = PairStream(sequences, cfg)
    model = SparseTT(cfg.model, seed=cfg.seed)
    model.train()
    model.reseed_dropout([cfg.seed, 4])
    opt = AdamW(model.parameters(), cfg.optim.lr, cfg.optim.weight_decay, (cfg.optim.beta1, cfg.optim.beta2))
    schedule = cfg.optim.schedule()
    dtype = cfg.model.np_dtype

    log_path = out / "train_log.csv"
    rows, ckpts = [], []
    digest = ""
    last_ckpt: Optional[Path] = None
    step = 0
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for epoch in range(cfg.data.epochs):
            opt.lr = schedule.lr_at(epoch)
            for samples in stream.epoch(epoch):
                if max_steps is not None and step >= max_steps:
                    break
                batch = collate(samples, dtype)
                if step == 0:
                    digest = batch.digest()
                try:
                    with Tape():
                        total, parts, _ = compute_losses(model, batch, cfg)
                    value = float(total.item())
                    if not np.isfinite(value):
                        raise NonFiniteError("non-finite training loss")
                    opt.zero_grad()
                    backward(total)
                except NonFiniteError as exc:
                    fh.flush()
                    raise TrainingAborted(f"step {step}: {exc}", last_ckpt) from exc
                opt.step()
                row = {"step": step, "epoch": epoch, "total": value, **parts, "lr": opt.lr}
                writer.writerow([_fmt(row[k]) for k in LOG_FIELDS])
                rows.append(row)
                if progress:
                    progress(row)
                step += 1
            path = out / f"epoch_{epoch:03d}.ckpt"
            save_model(model, cfg, path)
            shutil.copyfile(path, out / "last.ckpt")
            ckpts.append(path)
            last_ckpt = path
            if max_steps is not None and step >= max_steps:
                break
    model.eval()
    return TrainResult(model, log_path, ckpts, rows, digest)


def read_log(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in r.items()}
                for r in csv.DictReader(fh)]


def pair_ious(model: SparseTT, samples: Sequence[TrainingSample], window_influence: float = 0.0,
              batch_size: int = 8) -> np.ndarray:
    """IoU of the fused prediction against each sample's search-crop box."""
    from .boxes import box_iou
    from .model import fuse_and_select
    from .tensor import no_grad

    model.eval()
    geometry = model.cfg.geometry()
    out = []
    for i in range(0, len(samples), batch_size):
        batch = collate(samples[i:i + batch_size], model.cfg.np_dtype)
        with no_grad():
            maps = model(batch.template, batch.search)
        for j, s in enumerate(batch.samples):
            sel = fuse_and_select(maps.sample(j), geometry, model.cfg.fusion, window_influence)
            out.append(float(box_iou(sel.box, s.labels.gt_box)))
    return np.asarray(out)
