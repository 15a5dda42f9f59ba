"""Coarse outer updates (sample admission) and fine inner updates
(pseudo-label refinement).

Admission compares target-level miss and false-detection rates against
thresholds; refinement extracts adaptive-threshold candidates around each
label component, eliminates candidates missing every component centroid,
and blends prediction into the label inside the candidate union while the
rest decays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import Hyperparams, SampleRecord, SoftLabel
from .imaging import connected_components, crop_patch, paste_patch, round_half_up


@dataclass(frozen=True)
class CouDecision:
    sample_id: str
    miss_rate: float
    false_rate: float
    admitted: bool
    refined_label: SoftLabel | None

    def __post_init__(self):
        if self.admitted != (self.refined_label is not None):
            raise ValueError("refined_label present iff admitted")


def cou_evaluate(record: SampleRecord, prediction: SoftLabel | np.ndarray,
                 t_m: float, t_f: float, hp: Hyperparams) -> CouDecision:
    """Admission decision for one preparation-pool sample.

    A point counts as detected when it lies inside a predicted component
    (prediction binarized at hp.pred_threshold). The admitted label is the
    binarized prediction restricted to point-hitting components (the
    difference-of-sets step works on the binary detection map) with every
    annotation point forced to 1.0.
    """
    pred = prediction.data if isinstance(prediction, SoftLabel) else prediction
    points = record.annotation.points
    if not points:
        raise ValueError("sample has no annotation points")
    if pred.shape != record.image.shape:
        raise ValueError("prediction shape mismatch")

    comps = connected_components(pred > hp.pred_threshold)
    hit = [any(c.contains(p) for p in points) for c in comps]
    covered = sum(1 for p in points
                  if any(c.contains(p) for c, h in zip(comps, hit) if h))
    miss_rate = (len(points) - covered) / len(points)
    false_rate = sum(1 for h in hit if not h) / len(points)
    admitted = miss_rate <= t_m and false_rate <= t_f

    refined = None
    if admitted:
        keep = np.zeros(pred.shape, dtype=bool)
        for comp, h in zip(comps, hit):
            if h:
                keep[comp.pixels[:, 0], comp.pixels[:, 1]] = True
        label = keep.astype(np.float32)
        for r, c in points:
            label[r, c] = 1.0
        refined = SoftLabel(label)
    return CouDecision(record.id, miss_rate, false_rate, admitted, refined)


def adaptive_threshold(pred_patch: np.ndarray, label_patch: np.ndarray,
                       hp: Hyperparams) -> float:
    """Candidate-extraction threshold for one local patch.

    max(pred) * (tb + k*(1-tb) * positives / (h*w*r)) where positives
    counts label-patch pixels above the binarization threshold and h, w
    are the patch dimensions.
    """
    if pred_patch.shape != label_patch.shape:
        raise ValueError("patch shape mismatch")
    h, w = pred_patch.shape
    if h * w * hp.r <= 0:
        raise ValueError("h*w*r must be positive")
    peak = float(pred_patch.max()) if pred_patch.size else 0.0
    positives = int((label_patch > hp.binarize_threshold).sum())
    return peak * (hp.tb + hp.k * (1.0 - hp.tb) * positives / (h * w * hp.r))


def extract_candidates(prediction: np.ndarray, pseudo_label: np.ndarray,
                       hp: Hyperparams) -> tuple[np.ndarray, list[np.ndarray]]:
    """Candidate union for the label update.

    For each component of the binarized pseudo-label, crops a d x d window
    around its (rounded) centroid in both arrays, thresholds the
    prediction crop adaptively, keeps candidate components containing at
    least one label-component centroid, and merges kept candidates across
    crops by pixelwise max.

    Returns the {0,1}-valued float32 union and the kept candidate masks
    (full-size, one per surviving candidate component).
    """
    if prediction.shape != pseudo_label.shape:
        raise ValueError("shape mismatch")
    label_comps = connected_components(pseudo_label > hp.binarize_threshold)
    centroids = [(round_half_up(c.centroid[0]), round_half_up(c.centroid[1]))
                 for c in label_comps]
    union = np.zeros(prediction.shape, dtype=np.float32)
    kept_masks: list[np.ndarray] = []
    for comp, (cr, cc) in zip(label_comps, centroids):
        pred_patch, offset = crop_patch(prediction, (cr, cc), hp.d)
        label_patch, _ = crop_patch(pseudo_label, (cr, cc), hp.d)
        threshold = adaptive_threshold(pred_patch, label_patch, hp)
        candidates = pred_patch > threshold
        if not candidates.any():
            continue
        top, left = offset
        for cand in connected_components(candidates):
            global_pixels = cand.pixels + np.array([top, left], dtype=np.int32)
            keep = any((gr, gc) in centroids
                       for gr, gc in map(tuple, global_pixels))
            if not keep:
                continue
            full = np.zeros(prediction.shape, dtype=np.float32)
            full[global_pixels[:, 0], global_pixels[:, 1]] = 1.0
            kept_masks.append(full.astype(bool))
            np.maximum(union, full, out=union)
    return union, kept_masks


def fiu_update(pseudo_label: SoftLabel | np.ndarray,
               prediction: SoftLabel | np.ndarray,
               points: tuple[tuple[int, int], ...],
               hp: Hyperparams) -> SoftLabel:
    """One label refinement round.

    Inside the candidate union the label moves to the mean of label and
    prediction; outside it decays by lambda_decay. Annotation points are
    reset to 1.0 afterwards and the result is clamped to [0, 1].
    """
    label = (pseudo_label.data if isinstance(pseudo_label, SoftLabel)
             else np.asarray(pseudo_label, dtype=np.float32))
    pred = (prediction.data if isinstance(prediction, SoftLabel)
            else np.asarray(prediction, dtype=np.float32))
    union, _ = extract_candidates(pred, label, hp)
    inside = union > 0.0
    lam = np.float32(hp.lambda_decay)
    half = np.float32(0.5)
    updated = np.where(inside, (label + pred) * half, lam * label)
    updated = np.clip(updated, np.float32(0.0), np.float32(1.0))
    for r, c in points:
        updated[r, c] = 1.0
    return SoftLabel(updated.astype(np.float32))
