"""Evaluation protocol: pixel-level IoU / nIoU, target-level Pd / Fa,
and the false-alarm validity gate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import connected_components

FA_GATE = 1e-4
DEVIATION_DEFAULT = 3.0


def _counts(pred: np.ndarray, gt: np.ndarray) -> tuple[int, int, int]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError("pred/gt shape mismatch")
    tp = int((pred & gt).sum())
    fp = int((pred & ~gt).sum())
    fn = int((~pred & gt).sum())
    return tp, fp, fn


def iou(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Dataset-pooled intersection over union."""
    tp = fp = fn = 0
    for p, g in zip(preds, gts, strict=True):
        a, b, c = _counts(p, g)
        tp += a
        fp += b
        fn += c
    denom = tp + fp + fn
    return tp / denom if denom else 1.0


def niou(preds: list[np.ndarray], gts: list[np.ndarray]) -> float:
    """Mean of per-sample IoU; empty-vs-empty samples count as 1.0."""
    vals = []
    for p, g in zip(preds, gts, strict=True):
        tp, fp, fn = _counts(p, g)
        denom = tp + fp + fn
        vals.append(tp / denom if denom else 1.0)
    return float(np.mean(vals)) if vals else 1.0


def _match_greedy(pred_comps, gt_comps, deviation: float):
    """Greedy nearest-centroid matching; returns matched index pairs."""
    pairs = []
    for i, pc in enumerate(pred_comps):
        pset = {tuple(px) for px in map(tuple, pc.pixels)}
        for j, gc in enumerate(gt_comps):
            dist = float(np.hypot(pc.centroid[0] - gc.centroid[0],
                                  pc.centroid[1] - gc.centroid[1]))
            overlap = any(tuple(px) in pset for px in map(tuple, gc.pixels))
            if dist <= deviation or overlap:
                pairs.append((dist, i, j))
    pairs.sort(key=lambda t: (t[0], t[1], t[2]))
    used_pred: set[int] = set()
    used_gt: set[int] = set()
    matches = []
    for _, i, j in pairs:
        if i in used_pred or j in used_gt:
            continue
        used_pred.add(i)
        used_gt.add(j)
        matches.append((i, j))
    return matches


def pd_fa(preds: list[np.ndarray], gts: list[np.ndarray],
          deviation: float = DEVIATION_DEFAULT) -> tuple[float, float]:
    """Detection probability and false-alarm pixel rate.

    A ground-truth target is detected when a predicted component overlaps
    it or has its centroid within `deviation` pixels; each predicted
    component can claim at most one target. Fa counts the pixels of
    unmatched predicted components over all pixels in the dataset.
    """
    if deviation < 0:
        raise ValueError("deviation must be >= 0")
    total_targets = 0
    detected = 0
    false_pixels = 0
    total_pixels = 0
    for p, g in zip(preds, gts, strict=True):
        p = np.asarray(p, dtype=bool)
        g = np.asarray(g, dtype=bool)
        total_pixels += p.size
        pred_comps = connected_components(p)
        gt_comps = connected_components(g)
        total_targets += len(gt_comps)
        matches = _match_greedy(pred_comps, gt_comps, deviation)
        detected += len(matches)
        matched_pred = {i for i, _ in matches}
        false_pixels += sum(pc.area for i, pc in enumerate(pred_comps)
                            if i not in matched_pred)
    pd = detected / total_targets if total_targets else 1.0
    fa = false_pixels / total_pixels if total_pixels else 0.0
    return pd, fa


def validity(fa: float) -> bool:
    """A run is invalid when the false-alarm rate strictly exceeds 1e-4."""
    if fa < 0:
        raise ValueError("fa must be >= 0")
    return fa <= FA_GATE


@dataclass(frozen=True)
class EvalResult:
    iou: float
    niou: float
    pd: float
    fa: float
    valid: bool


def evaluate(preds: list[np.ndarray], gts: list[np.ndarray],
             deviation: float = DEVIATION_DEFAULT) -> EvalResult:
    p, f = pd_fa(preds, gts, deviation)
    fa_val = f
    return EvalResult(iou(preds, gts), niou(preds, gts), p, fa_val,
                      validity(fa_val))


CSV_HEADER = "epoch,phase,iou,niou,pd,fa,valid,pool_train,pool_prep,label_iou_gt"


def csv_row(row: dict) -> str:
    return ",".join([
        str(row["epoch"]),
        row["phase"],
        repr(float(row["iou"])),
        repr(float(row["niou"])),
        repr(float(row["pd"])),
        repr(float(row["fa"])),
        "1" if row["valid"] else "0",
        str(row["pool_train"]),
        str(row["pool_prep"]),
        repr(float(row["label_iou_gt"])),
    ])


def write_metrics_csv(path, rows: list[dict]) -> None:
    lines = [CSV_HEADER] + [csv_row(r) for r in rows]
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
