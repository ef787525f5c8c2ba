"""Command line: gen, gradcheck, train, eval, track, ablate."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

from .boxes import BBox
from .config import RunConfig, load_config, parse_config, serialize_config, toy_config
from .errors import ConfigError, InputError, SpecError
from .checkpoint import CheckpointError


def _overrides(cfg: RunConfig, pairs: Sequence[str]) -> RunConfig:
    flat = {}
    for p in pairs or ():
        if "=" not in p:
            raise ConfigError(f"--set expects key=value, got {p!r}")
        k, v = p.split("=", 1)
        flat[k.strip()] = v.strip()
    if not flat:
        return cfg
    text = serialize_config(cfg) + "".join(f"{k} = {v}\n" for k, v in flat.items())
    return parse_config(text, env=True)


def _run_config(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = parse_config(serialize_config(toy_config()), env=True)
    return _overrides(cfg, args.set)


def _csv_list(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def cmd_gen(args) -> int:
    from .synth import SUITE_NAMES, make_preset, render_sequence, write_sequence

    suites = _csv_list(args.suites) if args.suites else list(SUITE_NAMES)
    for name in suites:
        for seed in (int(s) for s in _csv_list(args.seeds)):
            seq = render_sequence(make_preset(name, seed, args.frames))
            d = write_sequence(seq, Path(args.out_dir) / f"{name}_s{seed}")
            print(f"{d}  frames={len(seq)}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    reports = run_suite(seed=args.seed, pattern=args.ops, max_coords=args.max_coords)
    if not reports:
        print(f"no gradient cases match {args.ops!r}", file=sys.stderr)
        return 2
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(r.line())
    for r in failed:
        print(f"FAILED {r.name}: worst coordinate input={r.worst[0]} index={r.worst[1]}", file=sys.stderr)
    return 1 if failed else 0


def cmd_train(args) -> int:
    from .train import TrainingAborted, train

    cfg = _run_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))

    def progress(row):
        if args.verbose and row["step"] % args.print_every == 0:
            print(f"step {row['step']:6d}  epoch {row['epoch']:3d}  loss {row['total']:.5f}  lr {row['lr']:.1e}")

    try:
        res = train(cfg, out, max_steps=args.max_steps, progress=progress)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}; last good checkpoint: {exc.last_checkpoint}", file=sys.stderr)
        return 3
    print(f"log {res.log_path}")
    print(f"checkpoint {out / 'last.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    from .experiments import evaluate, overall, write_curves, write_metrics
    from .train import load_model

    model = None
    if not args.oracle:
        if not args.checkpoint:
            raise InputError("--checkpoint is required unless --oracle is given")
        model, _ = load_model(args.checkpoint)
    suites = _csv_list(args.suites)
    seeds = [int(s) for s in _csv_list(args.seeds)]
    results = evaluate(model, suites, seeds, oracle=args.oracle, frames=args.frames)
    write_metrics(results, args.output)
    curve = args.curve or str(Path(args.output).with_name(Path(args.output).stem + "_curve.csv"))
    write_curves(results, curve)
    for r in results:
        m = r.metrics
        print(f"{r.suite:<14s} AO={m.ao:.4f} SR50={m.sr50:.4f} SR75={m.sr75:.4f}")
    o = overall(results)
    print(f"{'overall':<14s} AO={o['ao']:.4f} SR50={o['sr50']:.4f} SR75={o['sr75']:.4f}")
    return 0


def _parse_box(text: str) -> BBox:
    try:
        x, y, w, h = (float(v) for v in text.split(","))
    except ValueError:
        raise InputError(f"--init-box expects x,y,w,h, got {text!r}") from None
    return BBox.from_xywh(x, y, w, h)


def cmd_track(args) -> int:
    import numpy as np

    from .synth import read_sequence
    from .tracking import track_sequence
    from .train import load_model

    model, _ = load_model(args.checkpoint)
    seq = read_sequence(args.sequence_dir)
    has_gt = not np.isnan(seq.boxes).any()
    init = _parse_box(args.init_box) if args.init_box else (seq.box(0) if has_gt else None)
    if init is None:
        raise InputError("--init-box is required when the sequence has no groundtruth.txt")
    res = track_sequence(model, seq.images, init, seq.boxes if has_gt else None)
    with open(args.output, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["frame", "x_min", "y_min", "x_max", "y_max", "score", "iou"])
        for i, (b, s) in enumerate(zip(res.boxes, res.scores)):
            iou = f"{res.ious[i]:.6f}" if res.ious is not None else ""
            w.writerow([i] + [f"{v:.4f}" for v in b] + [f"{s:.6f}", iou])
    if res.ious is not None:
        m = res.metrics
        print(f"AO={m.ao:.4f} SR50={m.sr50:.4f} SR75={m.sr75:.4f}")
    print(f"trace {args.output}")
    return 0


def cmd_ablate(args) -> int:
    from .experiments import ablate

    cfg = _run_config(args)
    seeds = [int(s) for s in _csv_list(args.eval_seeds)]
    runs = ablate(cfg, args.axis, _csv_list(args.values), args.out_dir, seeds, args.max_steps)
    for r in runs:
        print(f"{args.axis}={r.label:<6s} first_batch={r.first_batch_digest[:16]}  final_loss={r.final_loss:.4f}")
    print(f"table {Path(args.out_dir) / f'ablation_{args.axis}.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsett", description="Desk-scale sparse-transformer tracker")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render synthetic sequences to directories")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--suites", default="", help="comma list (default: all presets)")
    g.add_argument("--seeds", default="0")
    g.add_argument("--frames", type=int, default=120)
    g.set_defaults(func=cmd_gen)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--ops", default=None, help="only cases whose name contains this")
    gc.add_argument("--max-coords", type=int, default=40)
    gc.set_defaults(func=cmd_gradcheck)

    def run_opts(sp):
        sp.add_argument("--config", help="key=value run configuration (default: toy settings)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
        sp.add_argument("--max-steps", type=int, default=None)

    t = sub.add_parser("train", help="train and write log + checkpoints")
    run_opts(t)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--print-every", type=int, default=50)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="track synthetic suites and report AO / SR")
    e.add_argument("--checkpoint")
    e.add_argument("--oracle", action="store_true", help="replay ground truth instead of a model")
    e.add_argument("--suites", default="easy-linear,scale-2x")
    e.add_argument("--seeds", default="100")
    e.add_argument("--frames", type=int, default=120)
    e.add_argument("--output", default="metrics.csv")
    e.add_argument("--curve", default=None, help="success-curve CSV (default: <output>_curve.csv)")
    e.set_defaults(func=cmd_eval)

    tr = sub.add_parser("track", help="track one sequence directory")
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--sequence-dir", required=True)
    tr.add_argument("--init-box", default=None, help="x,y,w,h (default: first groundtruth line)")
    tr.add_argument("--output", default="trace.csv")
    tr.set_defaults(func=cmd_track)

    a = sub.add_parser("ablate", help="train and evaluate one model per axis value")
    run_opts(a)
    a.add_argument("--axis", required=True, choices=("sparseness", "encoders", "decoders"))
    a.add_argument("--values", required=True, help="comma list; sparseness accepts 'full'")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--eval-seeds", default="100")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, SpecError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
