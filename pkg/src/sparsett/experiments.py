"""Suite evaluation and ablation sweeps behind the ``eval`` and ``ablate`` commands."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig
from .errors import ConfigError, InputError
from .model import SparseTT
from .synth import SUITE_NAMES, make_preset, render_sequence
from .tracking import THRESHOLDS, OracleTracker, SparseTTTracker, TrackMetrics, run_tracker
from .train import train

AXES = {"sparseness": "model.sparseness", "encoders": "model.encoder_layers", "decoders": "model.decoder_layers"}
AXIS_SYMBOL = {"sparseness": "K", "encoders": "N", "decoders": "M"}


@dataclass
class SuiteResult:
    suite: str
    metrics: TrackMetrics
    frames: int
    seconds: float

    @property
    def fps(self) -> float:
        return self.frames / self.seconds if self.seconds > 0 else float("inf")


def evaluate(model: Optional[SparseTT], suites: Sequence[str], seeds: Sequence[int] = (100,),
             oracle: bool = False, frames: int = 120) -> list[SuiteResult]:
    """Track every (suite, seed) sequence; IoUs are pooled per suite."""
    for s in suites:
        if s not in SUITE_NAMES:
            raise InputError(f"unknown suite {s!r}; choose from {', '.join(SUITE_NAMES)}")
    if model is None and not oracle:
        raise InputError("a model is required unless oracle=True")
    results = []
    for suite in suites:
        ious, n, secs = [], 0, 0.0
        for seed in seeds:
            seq = render_sequence(make_preset(suite, seed, frames))
            tracker = OracleTracker(seq.bboxes()) if oracle else SparseTTTracker(model)
            t0 = time.perf_counter()
            res = run_tracker(tracker, seq.images, seq.box(0), seq.boxes)
            secs += time.perf_counter() - t0
            ious.append(res.metrics.ious)
            n += len(seq) - 1
        results.append(SuiteResult(suite, TrackMetrics(np.concatenate(ious)), n, secs))
    return results


def overall(results: Sequence[SuiteResult]) -> dict:
    return {
        "ao": float(np.mean([r.metrics.ao for r in results])),
        "sr50": float(np.mean([r.metrics.sr50 for r in results])),
        "sr75": float(np.mean([r.metrics.sr75 for r in results])),
        "auc": float(np.mean([r.metrics.auc for r in results])),
    }


def write_metrics(results: Sequence[SuiteResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "ao", "sr50", "sr75", "auc", "frames"])
        for r in results:
            m = r.metrics
            w.writerow([r.suite, f"{m.ao:.6f}", f"{m.sr50:.6f}", f"{m.sr75:.6f}", f"{m.auc:.6f}", r.frames])
        o = overall(results)
        w.writerow(["overall", f"{o['ao']:.6f}", f"{o['sr50']:.6f}", f"{o['sr75']:.6f}", f"{o['auc']:.6f}",
                    sum(r.frames for r in results)])


def write_curves(results: Sequence[SuiteResult], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["suite", "threshold", "success"])
        for r in results:
            for t, v in zip(THRESHOLDS, r.metrics.success_curve()):
                w.writerow([r.suite, f"{t:.2f}", f"{v:.6f}"])


def parse_axis_values(axis: str, values: Sequence[str]) -> list[int]:
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {', '.join(AXES)}")
    out = []
    for v in values:
        v = str(v).strip()
        if axis == "sparseness" and v.lower() == "full":
            out.append(0)
            continue
        try:
            out.append(int(v))
        except ValueError:
            raise ConfigError(f"bad {axis} value {v!r}") from None
    lo = {"sparseness": 1, "encoders": 0, "decoders": 1}[axis]
    for v in out:
        if v < lo and not (axis == "sparseness" and v == 0):
            raise ConfigError(f"{axis} values must be >= {lo}")
    return out


@dataclass
class AblationRun:
    value: int
    label: str
    results: list
    first_batch_digest: str
    final_loss: float
    train_seconds: float


def ablate(cfg: RunConfig, axis: str, values: Sequence[str], out_dir: str | Path,
           eval_seeds: Sequence[int] = (100,), max_steps: Optional[int] = None) -> list[AblationRun]:
    """One training per value from the same seed and pair stream, then evaluation."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    parsed = parse_axis_values(axis, values)
    tokens = cfg.model.search_hw[0] * cfg.model.search_hw[1]
    runs = []
    for v in parsed:
        label = "full" if axis == "sparseness" and (v == 0 or v >= tokens) else str(v)
        run_cfg = cfg.replace(**{AXES[axis]: v})
        t0 = time.perf_counter()
        res = train(run_cfg, out / f"{axis}_{label}", max_steps=max_steps)
        secs = time.perf_counter() - t0
        results = evaluate(res.model, run_cfg.data.suites, eval_seeds)
        runs.append(AblationRun(v, label, results, res.first_batch_digest,
                                res.rows[-1]["total"] if res.rows else float("nan"), secs))
    write_ablation_table(axis, runs, out / f"ablation_{axis}.csv")
    write_ablation_runs(axis, runs, out / f"ablation_{axis}_runs.csv")
    return runs


def write_ablation_table(axis: str, runs: Sequence[AblationRun], path: str | Path) -> None:
    """Axis values as columns; AO, SR_0.5, SR_0.75 and FPS as rows."""
    summaries = [overall(r.results) for r in runs]
    fps = [sum(x.frames for x in r.results) / max(1e-9, sum(x.seconds for x in r.results)) for r in runs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([AXIS_SYMBOL[axis]] + [r.label for r in runs])
        w.writerow(["AO"] + [f"{s['ao']:.4f}" for s in summaries])
        w.writerow(["SR_0.5"] + [f"{s['sr50']:.4f}" for s in summaries])
        w.writerow(["SR_0.75"] + [f"{s['sr75']:.4f}" for s in summaries])
        w.writerow(["FPS"] + [f"{f:.1f}" for f in fps])


def write_ablation_runs(axis: str, runs: Sequence[AblationRun], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([axis, "final_loss", "train_seconds", "first_batch_sha256"])
        for r in runs:
            w.writerow([r.label, repr(r.final_loss), f"{r.train_seconds:.1f}", r.first_batch_digest])
