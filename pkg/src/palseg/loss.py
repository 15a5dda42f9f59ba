"""Training objectives with analytic gradients.

The primary objective weights per-pixel cross-entropy on target-edge
pixels, then averages over the difficult half of the pixels (loss values
at or above the median). Plain BCE, Dice, and Focal are provided for the
loss ablation axis. Every function returns the scalar loss and the
gradient of that scalar with respect to the prediction array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_types import Hyperparams
from .imaging import extract_edges

EPS = 1e-7


@dataclass(frozen=True)
class LossOutput:
    value: float
    gradient: np.ndarray


def _clamped(pred: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred)
    return np.clip(pred, EPS, 1.0 - EPS)


def _check_binary(target: np.ndarray) -> np.ndarray:
    target = np.asarray(target)
    if not np.all((target == 0) | (target == 1)):
        raise ValueError("target must be binary")
    return target


def _bce_elementwise(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    return -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))


def eedm_loss(prediction: np.ndarray, binary_target: np.ndarray,
              hp: Hyperparams | None = None) -> LossOutput:
    """Edge-weighted cross-entropy averaged over the above-median pixels.

    Edge pixels of the binary target get weight alpha_edge, all others
    weight 1. The mined set S holds the pixels whose weighted loss is
    greater than or equal to the median (even counts use the mean of the
    two middle order statistics); the selection is treated as constant
    during backpropagation.
    """
    alpha = hp.alpha_edge if hp is not None else 4.0
    t = _check_binary(binary_target)
    p = _clamped(prediction)
    t = t.astype(p.dtype)
    edges = extract_edges(t > 0.5)
    weight = np.where(edges, alpha, 1.0).astype(p.dtype)
    pixel_loss = weight * _bce_elementwise(p, t)
    median = np.median(pixel_loss)
    mined = pixel_loss >= median
    n_mined = int(mined.sum())
    value = float(pixel_loss[mined].mean(dtype=np.float64))
    grad = np.zeros_like(p)
    grad[mined] = (weight[mined] * (p[mined] - t[mined])
                   / (p[mined] * (1.0 - p[mined])) / n_mined)
    return LossOutput(value, grad)


def bce_loss(prediction: np.ndarray, target: np.ndarray) -> LossOutput:
    p = _clamped(prediction)
    t = np.asarray(target, dtype=p.dtype)
    value = float(_bce_elementwise(p, t).mean(dtype=np.float64))
    grad = (p - t) / (p * (1.0 - p)) / p.size
    return LossOutput(value, grad)


def dice_loss(prediction: np.ndarray, target: np.ndarray,
              smooth: float = 1.0) -> LossOutput:
    p = np.asarray(prediction)  # no clamping: the ratio needs no logs
    t = np.asarray(target, dtype=p.dtype)
    num = 2.0 * float((p * t).sum(dtype=np.float64)) + smooth
    den = float(p.sum(dtype=np.float64) + t.sum(dtype=np.float64)) + smooth
    value = 1.0 - num / den
    grad = -(2.0 * t * den - num) / (den * den)
    return LossOutput(float(value), grad.astype(p.dtype))


def focal_loss(prediction: np.ndarray, target: np.ndarray,
               gamma: float = 2.0, alpha_f: float = 0.25) -> LossOutput:
    """Focal loss with a uniform scale alpha_f on both classes.

    With gamma=0 and alpha_f=1 this reduces exactly to bce_loss.
    """
    p = _clamped(prediction)
    t = np.asarray(target, dtype=p.dtype)
    pt = np.where(t > 0.5, p, 1.0 - p)
    focus = (1.0 - pt) ** gamma
    value = float((-alpha_f * focus * np.log(pt)).mean(dtype=np.float64))
    # d/d(pt) of -alpha*(1-pt)^g*log(pt), then d(pt)/dp = +/-1
    if gamma == 0.0:
        dpt = -alpha_f / pt
    else:
        dpt = alpha_f * (gamma * (1.0 - pt) ** (gamma - 1.0) * np.log(pt)
                         - focus / pt)
    grad = np.where(t > 0.5, dpt, -dpt) / p.size
    return LossOutput(value, grad.astype(p.dtype))
