"""Classical image-processing primitives used by the label pipelines.

All operations are pure and work on plain 2-D numpy arrays: float32 in
[0, 1] for intensities, bool for masks. Connected components and
morphology use 8-connectivity; hole filling floods the background with
4-connectivity (the standard pairing that avoids topological paradoxes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

EIGHT_CONN = np.ones((3, 3), dtype=bool)

# Sobel kernels, scaled so a unit step edge has gradient magnitude ~1.
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 4.0
_SOBEL_Y = _SOBEL_X.T


def round_half_up(x: float) -> int:
    """Nearest integer with halves rounded toward +inf."""
    return int(np.floor(x + 0.5))


def _conv2_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2-D correlation with mirrored (no edge repeat) borders."""
    kh, kw = kernel.shape
    pr, pc = kh // 2, kw // 2
    padded = np.pad(img.astype(np.float64), ((pr, pr), (pc, pc)), mode="reflect")
    out = np.zeros(img.shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out += kernel[i, j] * padded[i:i + img.shape[0], j:j + img.shape[1]]
    return out


def gaussian_kernel(sigma: float, ksize: int) -> np.ndarray:
    """Normalized 1-D Gaussian kernel of odd length ksize."""
    if ksize % 2 == 0:
        raise ValueError("ksize must be odd")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    half = ksize // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float = 1.0, ksize: int = 5) -> np.ndarray:
    """Separable Gaussian blur with mirrored borders, kernel sum 1."""
    k = gaussian_kernel(sigma, ksize)
    half = ksize // 2
    work = np.pad(img.astype(np.float64), ((half, half), (0, 0)), mode="reflect")
    rows = np.zeros(img.shape, dtype=np.float64)
    for i in range(ksize):
        rows += k[i] * work[i:i + img.shape[0], :]
    work = np.pad(rows, ((0, 0), (half, half)), mode="reflect")
    out = np.zeros(img.shape, dtype=np.float64)
    for j in range(ksize):
        out += k[j] * work[:, j:j + img.shape[1]]
    return out.astype(np.float32)


def sobel_gradients(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column- and row-direction gradients in intensity units."""
    gx = _conv2_same(img, _SOBEL_X)
    gy = _conv2_same(img, _SOBEL_Y)
    return gx, gy


_SECTOR_OFFSETS = ((0, 1), (1, 1), (1, 0), (1, -1),
                   (0, -1), (-1, -1), (-1, 0), (-1, 1))


def _nms(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    """Non-maximum suppression along the quantized gradient direction.

    The gradient is quantized to the four comparison axes (0/45/90/135
    degrees) keeping its sign, so "forward" always points toward the
    brighter side. A pixel survives when it strictly beats the forward
    neighbor and at least ties the backward one; a 2-pixel plateau then
    keeps exactly the bright-side pixel, and filling a closed contour
    recovers the bright region without a one-pixel dark shell.
    """
    h, w = mag.shape
    angle = np.arctan2(gy, gx)
    sector = np.round(angle / (np.pi / 4)).astype(np.int64) % 8

    def shifted(dr: int, dc: int) -> np.ndarray:
        out = np.zeros_like(mag)  # out-of-bounds neighbors count as zero
        rs = slice(max(dr, 0), h + min(dr, 0))
        rd = slice(max(-dr, 0), h + min(-dr, 0))
        cs = slice(max(dc, 0), w + min(dc, 0))
        cd = slice(max(-dc, 0), w + min(-dc, 0))
        out[rd, cd] = mag[rs, cs]
        return out

    keep = np.zeros((h, w), dtype=bool)
    for k, (dr, dc) in enumerate(_SECTOR_OFFSETS):
        fwd = shifted(dr, dc)
        bwd = shifted(-dr, -dc)
        keep |= (sector == k) & (mag >= bwd) & (mag > fwd) & (mag > 0)
    return keep


def canny(img: np.ndarray, low: float = 0.1, high: float = 0.3) -> np.ndarray:
    """Edge detection: Sobel, quantized NMS, double threshold, hysteresis.

    Thresholds apply to gradient magnitude in intensity units, so a step
    edge of contrast c has magnitude ~c. Weak pixels survive only when
    8-connected to a strong pixel.
    """
    if not (0.0 <= low < high <= 1.0):
        raise ValueError("need 0 <= low < high <= 1")
    gx, gy = sobel_gradients(img)
    mag = np.hypot(gx, gy)
    ridge = _nms(mag, gx, gy)
    strong = ridge & (mag >= high)
    weak = ridge & (mag >= low)
    if not strong.any():
        return np.zeros(img.shape, dtype=bool)
    labels, n = ndimage.label(weak, structure=EIGHT_CONN)
    keep = np.zeros(n + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return keep[labels]


def morph_close(mask: np.ndarray, radius: int = 1) -> np.ndarray:
    """Dilation then erosion with a square element of side 2*radius+1."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    se = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    dilated = ndimage.binary_dilation(mask, structure=se, border_value=0)
    # border_value=1 keeps closing extensive at the image boundary
    return ndimage.binary_erosion(dilated, structure=se, border_value=1)


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Fill background regions not 4-connected to the image border."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


@dataclass(frozen=True)
class ConnectedComponent:
    pixels: np.ndarray            # (n, 2) int32 row/col coordinates
    bbox: tuple[int, int, int, int]  # min_row, min_col, max_row, max_col
    area: int
    centroid: tuple[float, float]

    def contains(self, point: tuple[int, int]) -> bool:
        r, c = point
        r0, c0, r1, c1 = self.bbox
        if not (r0 <= r <= r1 and c0 <= c <= c1):
            return False
        return bool(np.any((self.pixels[:, 0] == r) & (self.pixels[:, 1] == c)))

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        out[self.pixels[:, 0], self.pixels[:, 1]] = True
        return out


def connected_components(mask: np.ndarray) -> list[ConnectedComponent]:
    """8-connected components ordered by (min row, min col) of each."""
    mask = np.asarray(mask, dtype=bool)
    labels, n = ndimage.label(mask, structure=EIGHT_CONN)
    comps = []
    for sl_idx, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        rr, cc = np.nonzero(labels[sl] == sl_idx)
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        pixels = np.stack([rr, cc], axis=1).astype(np.int32)
        bbox = (int(rr.min()), int(cc.min()), int(rr.max()), int(cc.max()))
        comps.append(ConnectedComponent(
            pixels=pixels,
            bbox=bbox,
            area=int(pixels.shape[0]),
            centroid=(float(rr.mean()), float(cc.mean())),
        ))
    comps.sort(key=lambda c: (c.bbox[0], c.bbox[1]))
    return comps


def extract_edges(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background or out-of-bounds 4-neighbor."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return mask & ~interior


def crop_patch(arr: np.ndarray, center: tuple[int, int],
               side: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Crop a side x side window around center, clamped at the borders.

    Returns the (possibly smaller) patch copy and its top-left offset in
    the source array, so paste_patch inverts the crop exactly.
    """
    if side % 2 == 0:
        raise ValueError("side must be odd")
    h, w = arr.shape
    half = side // 2
    r, c = int(center[0]), int(center[1])
    top = max(r - half, 0)
    left = max(c - half, 0)
    bottom = min(r + half + 1, h)
    right = min(c + half + 1, w)
    return arr[top:bottom, left:right].copy(), (top, left)


def paste_patch(canvas: np.ndarray, patch: np.ndarray,
                offset: tuple[int, int], merge: str = "max") -> None:
    """Paste patch into canvas at offset, in place."""
    top, left = offset
    view = canvas[top:top + patch.shape[0], left:left + patch.shape[1]]
    if merge == "max":
        np.maximum(view, patch.astype(canvas.dtype), out=view)
    elif merge == "replace":
        view[...] = patch
    else:
        raise ValueError(f"unknown merge mode {merge!r}")
