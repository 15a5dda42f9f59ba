"""Command-line experiment runner.

Subcommands: generate (synthetic dataset), train (full experiment),
eval (metrics over mask directories), plot (SVG curves from a report).
Exit codes: 0 valid run, 2 invalid (false-alarm gate), 3 aborted,
4 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .core_types import Hyperparams, PointKind, dump_json, read_mask, write_mask
from .datagen import DatasetConfig, load_dataset, write_dataset
from .metrics import evaluate, write_metrics_csv
from .model import TrainingDiverged
from .scheduler import MODES, EmptyTrainingPool, run_experiment

EXIT_VALID = 0
EXIT_INVALID = 2
EXIT_ABORTED = 3
EXIT_BAD_CONFIG = 4


class ConfigError(ValueError):
    pass


def _load_config(path: str | None, cls):
    if path is None:
        return cls()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    try:
        return cls.from_dict(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_generate(args) -> int:
    config = _load_config(args.config, DatasetConfig)
    if args.seed is not None:
        config = DatasetConfig.from_dict(
            {**config.__dict__, "seed": args.seed})
    summary = write_dataset(args.out, config)
    print(f"wrote {summary['n']} samples to {args.out} "
          f"({summary['easy']} easy / {summary['hard']} hard, "
          f"mean target {summary['mean_target_pixels']:.1f} px, "
          f"max {summary['max_target_pixels']} px)")
    return EXIT_VALID


def cmd_train(args) -> int:
    hp = _load_config(args.config, Hyperparams)
    if args.seed is not None:
        hp = Hyperparams.from_dict({**hp.to_dict(), "seed": args.seed})
    kind = PointKind(args.labels)
    records, store = load_dataset(args.dataset, kind)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    try:
        report = run_experiment(
            records, store, hp, mode=args.mode,
            snapshot_dir=out / "snapshots",
            snapshot_every=args.snapshot_every,
        )
    except (EmptyTrainingPool, TrainingDiverged, RuntimeError) as exc:
        dump_json(out / "error.json",
                  {"error": type(exc).__name__, "message": str(exc)})
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORTED

    dump_json(out / "report.json", report.to_json())
    write_metrics_csv(out / "metrics.csv", report.epochs)
    report.predictor.save(out / "model.bin")
    dump_json(out / "meta.json", {
        "finished_unix": time.time(),
        "runtime_seconds": time.time() - t0,
        "mode": args.mode,
        "labels": kind.value,
    })
    if args.dump_epg or args.mode == "epg-only":
        epg_dir = out / "epg"
        epg_dir.mkdir(exist_ok=True)
        from .core_types import write_gray
        for rec in report.records:
            write_gray(epg_dir / f"{rec.id}.png", rec.pseudo_label.data,
                       bits=8)
    final = report.final
    print(f"mode={args.mode} final iou={final['iou']:.4f} "
          f"niou={final['niou']:.4f} pd={final['pd']:.4f} "
          f"fa={final['fa']:.2e} valid={final['valid']}")
    return EXIT_VALID if final["valid"] else EXIT_INVALID


def cmd_eval(args) -> int:
    pred_dir = Path(args.pred)
    gt_dir = Path(args.gt)
    pred_files = {p.name for p in pred_dir.glob("*.png")}
    gt_files = {p.name for p in gt_dir.glob("*.png")}
    if pred_files != gt_files:
        only_pred = sorted(pred_files - gt_files)
        only_gt = sorted(gt_files - pred_files)
        print("file sets differ:", file=sys.stderr)
        if only_pred:
            print(f"  only in pred: {only_pred}", file=sys.stderr)
        if only_gt:
            print(f"  only in gt: {only_gt}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    names = sorted(pred_files)
    preds = [read_mask(pred_dir / n) for n in names]
    gts = [read_mask(gt_dir / n) for n in names]
    result = evaluate(preds, gts)
    payload = {"iou": result.iou, "niou": result.niou, "pd": result.pd,
               "fa": result.fa, "valid": result.valid, "n": len(names)}
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.out:
        dump_json(args.out, payload)
    return EXIT_VALID if result.valid else EXIT_INVALID


# ---------------------------------------------------------------------------
# Hand-written SVG line plots (no plotting dependency)
# ---------------------------------------------------------------------------

_W, _H = 640, 400
_ML, _MR, _MT, _MB = 60, 20, 30, 45
_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def svg_line_plot(series: dict[str, list[tuple[float, float]]],
                  title: str, xlabel: str, ylabel: str) -> str:
    """Render named (x, y) series as a standalone SVG document."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pw = _W - _ML - _MR
    ph = _H - _MT - _MB

    def sx(x):
        return _ML + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y):
        return _MT + ph - (y - y_lo) / (y_hi - y_lo) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="18" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" '
        f'stroke="black"/>',
    ]
    for tx in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(tx):.1f}" y1="{_MT + ph}" '
                     f'x2="{sx(tx):.1f}" y2="{_MT + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{sx(tx):.1f}" y="{_MT + ph + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="10">{tx:g}</text>')
    for ty in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{_ML - 5}" y1="{sy(ty):.1f}" x2="{_ML}" '
                     f'y2="{sy(ty):.1f}" stroke="black"/>')
        parts.append(f'<text x="{_ML - 8}" y="{sy(ty) + 3:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="10">{ty:.3g}</text>')
    parts.append(f'<text x="{_ML + pw / 2}" y="{_H - 8}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{xlabel}</text>')
    parts.append(f'<text x="14" y="{_MT + ph / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 14 {_MT + ph / 2})">{ylabel}</text>')
    for idx, (name, pts) in enumerate(series.items()):
        color = _COLORS[idx % len(_COLORS)]
        if len(pts) == 1:
            x, y = pts[0]
            parts.append(f'<circle cx="{sx(x):.1f}" cy="{sy(y):.1f}" r="3" '
                         f'fill="{color}"/>')
        else:
            coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
            parts.append(f'<polyline points="{coords}" fill="none" '
                         f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_ML + 8}" y="{_MT + 16 + 14 * idx}" '
                     f'font-family="sans-serif" font-size="11" '
                     f'fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_plot(args) -> int:
    report = json.loads(Path(args.report).read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = report["epochs"]
    epochs = [r["epoch"] for r in rows]

    plots = {
        "iou_vs_epoch.svg": svg_line_plot(
            {"iou": list(zip(epochs, [r["iou"] for r in rows])),
             "niou": list(zip(epochs, [r["niou"] for r in rows]))},
            "Segmentation quality", "epoch", "IoU"),
        "pool_vs_epoch.svg": svg_line_plot(
            {"training": list(zip(epochs, [r["pool_train"] for r in rows])),
             "preparation": list(zip(epochs, [r["pool_prep"] for r in rows]))},
            "Pool sizes", "epoch", "samples"),
        "label_quality_vs_epoch.svg": svg_line_plot(
            {"label iou": list(zip(epochs,
                                   [r["label_iou_gt"] for r in rows]))},
            "Pseudo-label quality vs hidden truth", "epoch", "IoU"),
    }
    for name, svg in plots.items():
        (out / name).write_text(svg)
    print(f"wrote {len(plots)} plots to {out}")
    return EXIT_VALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="palseg",
        description="Point-supervised small-target segmentation experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic dataset")
    p_gen.add_argument("--config", default=None)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(fn=cmd_generate)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--dataset", required=True)
    p_train.add_argument("--out", required=True)
    p_train.add_argument("--mode", choices=MODES, default="pal")
    p_train.add_argument("--labels", choices=("coarse", "centroid"),
                         default="coarse")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--dump-epg", action="store_true")
    p_train.add_argument("--snapshot-every", type=int, default=None,
                         metavar="N")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="score prediction masks")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(fn=cmd_eval)

    p_plot = sub.add_parser("plot", help="emit SVG curves from a report")
    p_plot.add_argument("--report", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG


if __name__ == "__main__":
    sys.exit(main())
