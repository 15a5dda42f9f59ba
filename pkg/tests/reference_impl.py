"""Independent per-pixel reference for the label-refinement update.

Deliberately naive: pure-Python loops, no cropping shortcuts, its own
flood fill and rounding. Used by the tests to pin the vectorized
implementation bit-for-bit.
"""

import numpy as np


def _components(mask):
    """8-connected components of a list-of-lists mask, DFS order."""
    h = len(mask)
    w = len(mask[0])
    seen = [[False] * w for _ in range(h)]
    comps = []
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0][c0] or seen[r0][c0]:
                continue
            stack = [(r0, c0)]
            seen[r0][c0] = True
            pixels = []
            while stack:
                r, c = stack.pop()
                pixels.append((r, c))
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        rr, cc = r + dr, c + dc
                        if (0 <= rr < h and 0 <= cc < w
                                and mask[rr][cc] and not seen[rr][cc]):
                            seen[rr][cc] = True
                            stack.append((rr, cc))
            comps.append(pixels)
    return comps


def _round_half_up(x):
    import math
    return int(math.floor(x + 0.5))


def _window(center, side, h, w):
    half = side // 2
    r, c = center
    top = max(r - half, 0)
    left = max(c - half, 0)
    bottom = min(r + half + 1, h)
    right = min(c + half + 1, w)
    return top, left, bottom, right


def reference_candidate_union(prediction, label, hp):
    """Candidate union recomputed globally, pixel by pixel."""
    h, w = label.shape
    binary = [[bool(label[r][c] > hp.binarize_threshold) for c in range(w)]
              for r in range(h)]
    comps = _components(binary)
    centroids = []
    for pixels in comps:
        mr = sum(p[0] for p in pixels) / len(pixels)
        mc = sum(p[1] for p in pixels) / len(pixels)
        centroids.append((_round_half_up(mr), _round_half_up(mc)))
    union = np.zeros((h, w), dtype=bool)
    for (cr, cc) in centroids:
        top, left, bottom, right = _window((cr, cc), hp.d, h, w)
        ph, pw = bottom - top, right - left
        peak = 0.0
        for r in range(top, bottom):
            for c in range(left, right):
                peak = max(peak, float(prediction[r][c]))
        positives = 0
        for r in range(top, bottom):
            for c in range(left, right):
                if label[r][c] > hp.binarize_threshold:
                    positives += 1
        threshold = peak * (hp.tb + hp.k * (1.0 - hp.tb)
                            * positives / (ph * pw * hp.r))
        cand = [[False] * pw for _ in range(ph)]
        any_cand = False
        for r in range(ph):
            for c in range(pw):
                if prediction[top + r][left + c] > threshold:
                    cand[r][c] = True
                    any_cand = True
        if not any_cand:
            continue
        for pixels in _components(cand):
            keep = False
            for (r, c) in pixels:
                if (top + r, left + c) in centroids:
                    keep = True
                    break
            if keep:
                for (r, c) in pixels:
                    union[top + r, left + c] = True
    return union


def reference_fiu(label, prediction, points, hp):
    """Per-pixel realization of the decay/blend update."""
    h, w = label.shape
    union = reference_candidate_union(prediction, label, hp)
    lam = np.float32(hp.lambda_decay)
    half = np.float32(0.5)
    out = np.zeros((h, w), dtype=np.float32)
    for r in range(h):
        for c in range(w):
            ell = np.float32(label[r][c])
            p = np.float32(prediction[r][c])
            if union[r][c]:
                val = (ell + p) * half
            else:
                val = lam * ell
            val = min(max(val, np.float32(0.0)), np.float32(1.0))
            out[r, c] = val
    for (r, c) in points:
        out[r, c] = np.float32(1.0)
    return out
