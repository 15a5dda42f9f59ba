"""Easy-sample pseudo-label generation.

Segments a local patch around each annotated point with a classical
pipeline (blur, edge detection, closing, hole filling), keeps only
point-hitting components below an area budget, and classifies the sample
as easy when the resulting target-level recall clears the threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_types import Hyperparams, SampleRecord, SoftLabel
from .imaging import (ConnectedComponent, canny, connected_components,
                      crop_patch, fill_holes, gaussian_blur, morph_close,
                      paste_patch)

# Edge thresholds sit below the imaging defaults: the targets here are
# soft Gaussian-like bumps whose peak gradient is well under a hard step
# of the same contrast.
CANNY_LOW = 0.08
CANNY_HIGH = 0.18
BLUR_SIGMA = 0.6
BLUR_KSIZE = 5
CLOSE_RADIUS = 1


def segment_patch(img: np.ndarray, point: tuple[int, int],
                  patch_side: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Segment the patch around one annotated point.

    Returns the patch-local binary segmentation together with the patch
    offset in the full image.
    """
    h, w = img.shape
    r, c = point
    if not (0 <= r < h and 0 <= c < w):
        raise ValueError(f"point {point} outside image {img.shape}")
    patch, offset = crop_patch(img, point, patch_side)
    blurred = gaussian_blur(patch, sigma=BLUR_SIGMA, ksize=BLUR_KSIZE)
    edges = canny(blurred, low=CANNY_LOW, high=CANNY_HIGH)
    closed = morph_close(edges, radius=CLOSE_RADIUS)
    return fill_holes(closed), offset


def validate_components(seg: np.ndarray, points: list[tuple[int, int]],
                        max_area: int) -> tuple[list[ConnectedComponent], float]:
    """Keep point-hitting components below max_area; report recall.

    A component is a true target iff it contains at least one annotation
    point and its area does not exceed max_area. Recall is the fraction
    of points lying in some kept component.
    """
    if max_area < 1:
        raise ValueError("max_area must be >= 1")
    if not points:
        raise ValueError("recall undefined without annotation points")
    kept = []
    for comp in connected_components(seg):
        if comp.area > max_area:
            continue
        if any(comp.contains(p) for p in points):
            kept.append(comp)
    covered = sum(1 for p in points if any(c.contains(p) for c in kept))
    return kept, covered / len(points)


def epg_max_area(hp: Hyperparams, shape: tuple[int, int]) -> int:
    return max(1, math.ceil(hp.epg_area_ratio * shape[0] * shape[1]))


def epg_classify(record: SampleRecord,
                 hp: Hyperparams) -> tuple[str, SoftLabel]:
    """Classify a sample as easy or hard and build its initial pseudo-label.

    Easy samples get the kept patch segmentations pasted onto a zero
    canvas (merged pixelwise by max) plus all annotation points at 1.0;
    hard samples get the points-only label.
    """
    img = record.image.data
    h, w = img.shape
    points = list(record.annotation.points)
    max_area = epg_max_area(hp, (h, w))

    canvas = np.zeros((h, w), dtype=np.float32)
    covered = set()
    for point in points:
        seg, (top, left) = segment_patch(img, point, hp.d)
        local_points = [(r - top, c - left) for r, c in points
                        if top <= r < top + seg.shape[0]
                        and left <= c < left + seg.shape[1]]
        kept, _ = validate_components(seg, local_points, max_area)
        if not kept:
            continue
        patch_label = np.zeros(seg.shape, dtype=np.float32)
        for comp in kept:
            patch_label[comp.pixels[:, 0], comp.pixels[:, 1]] = 1.0
        paste_patch(canvas, patch_label, (top, left), merge="max")
        for lr, lc in local_points:
            if any(comp.contains((lr, lc)) for comp in kept):
                covered.add((lr + top, lc + left))

    recall = len(covered) / len(points)
    classification = "easy" if recall >= hp.recall_threshold else "hard"
    if classification == "hard":
        canvas = np.zeros((h, w), dtype=np.float32)
    for r, c in points:
        canvas[r, c] = 1.0
    return classification, SoftLabel(canvas)


def points_only_label(record: SampleRecord) -> SoftLabel:
    """Label carrying only the annotation points at 1.0."""
    canvas = np.zeros(record.image.shape, dtype=np.float32)
    for r, c in record.annotation.points:
        canvas[r, c] = 1.0
    return SoftLabel(canvas)
