"""Synthetic infrared-like scene generator.

Produces images with a handful of tiny anisotropic Gaussian blobs on a
flat, gradient, or cluttered background, together with dense ground-truth
masks and single-pixel annotations (one per target). Ground truth lives
in a separate store that training code never touches; an access counter
makes that auditable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .core_types import (GrayImage, PointAnnotation, PointKind, Pool,
                         SampleRecord, SoftLabel, dump_json, read_gray,
                         read_mask, write_gray, write_mask)

_HALF_PEAK = np.sqrt(2.0 * np.log(2.0))  # half-peak radius in sigma units


class GenerationError(RuntimeError):
    """Raised when target placement fails after bounded retries."""


@dataclass(frozen=True)
class SceneSpec:
    height: int = 64
    width: int = 64
    n_targets: tuple[int, int] = (1, 3)
    radius: tuple[float, float] = (1.0, 4.0)
    contrast: tuple[float, float] = (0.6, 0.95)
    background: str = "flat"            # flat | gradient | clutter-noise
    noise_std: float = 0.01
    difficulty: str = "easy"            # easy | hard

    def __post_init__(self):
        if self.background not in ("flat", "gradient", "clutter-noise"):
            raise ValueError(f"unknown background {self.background!r}")
        if self.difficulty not in ("easy", "hard"):
            raise ValueError(f"unknown difficulty {self.difficulty!r}")
        if not (0.0 < self.contrast[0] <= self.contrast[1] <= 1.0):
            raise ValueError("contrast range must lie in (0, 1]")
        max_radius = min(self.height, self.width) / 8.0
        if not (1.0 <= self.radius[0] <= self.radius[1] <= max_radius):
            raise ValueError("radius range must lie in [1, min(h,w)/8]")


def default_easy_spec() -> SceneSpec:
    return SceneSpec(difficulty="easy", background="flat", radius=(2.0, 4.0),
                     contrast=(0.6, 0.95), noise_std=0.01)


def default_hard_spec() -> SceneSpec:
    return SceneSpec(difficulty="hard", background="clutter-noise",
                     radius=(1.0, 2.5), contrast=(0.18, 0.4),
                     noise_std=0.05)


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    base = rng.uniform(0.15, 0.35)
    if spec.background == "flat":
        bg = np.full((h, w), base)
    elif spec.background == "gradient":
        lo, hi = sorted(rng.uniform(0.1, 0.4, size=2))
        theta = rng.uniform(0, 2 * np.pi)
        rr, cc = np.mgrid[0:h, 0:w]
        t = (rr * np.sin(theta) + cc * np.cos(theta))
        t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
        bg = lo + (hi - lo) * t
    else:  # clutter-noise: low-frequency field resampled from a coarse grid
        cells = 5
        coarse = rng.uniform(0.05, 0.45, size=(cells, cells))
        ry = np.linspace(0, cells - 1, h)
        cx = np.linspace(0, cells - 1, w)
        r0 = np.floor(ry).astype(int).clip(0, cells - 2)
        c0 = np.floor(cx).astype(int).clip(0, cells - 2)
        fr = (ry - r0)[:, None]
        fc = (cx - c0)[None, :]
        g00 = coarse[np.ix_(r0, c0)]
        g01 = coarse[np.ix_(r0, c0 + 1)]
        g10 = coarse[np.ix_(r0 + 1, c0)]
        g11 = coarse[np.ix_(r0 + 1, c0 + 1)]
        bg = (g00 * (1 - fr) * (1 - fc) + g01 * (1 - fr) * fc
              + g10 * fr * (1 - fc) + g11 * fr * fc)
    return bg


def _blob(spec: SceneSpec, rng: np.random.Generator,
          row: float, col: float, radius: float,
          contrast: float) -> tuple[np.ndarray, np.ndarray]:
    """Anisotropic Gaussian bump and its half-peak mask."""
    h, w = spec.height, spec.width
    u1, u2 = rng.uniform(0.7, 1.3, size=2)
    theta = rng.uniform(0, np.pi)
    s1 = radius * u1 / _HALF_PEAK
    s2 = radius * u2 / _HALF_PEAK
    rr, cc = np.mgrid[0:h, 0:w]
    dr = rr - row
    dc = cc - col
    a = dr * np.cos(theta) + dc * np.sin(theta)
    b = -dr * np.sin(theta) + dc * np.cos(theta)
    q = (a / s1) ** 2 + (b / s2) ** 2
    bump = contrast * np.exp(-0.5 * q)
    mask = bump >= contrast / 2.0
    return bump, mask


def generate_scene(spec: SceneSpec, rng: np.random.Generator,
                   max_tries: int = 200):
    """Generate one scene.

    Returns (image, gt_mask, coarse annotation, centroid annotation).
    Target masks come from the analytic blobs thresholded at half peak,
    before noise; each ground-truth component carries exactly one
    annotation point of each kind.
    """
    h, w = spec.height, spec.width
    n = int(rng.integers(spec.n_targets[0], spec.n_targets[1] + 1))
    bg = _background(spec, rng)
    image = bg.copy()
    gt = np.zeros((h, w), dtype=bool)
    coarse_pts, centroid_pts = [], []
    placed = []  # (row, col, radius)

    for _ in range(n):
        for attempt in range(max_tries + 1):
            if attempt == max_tries:
                raise GenerationError("could not place target without overlap")
            radius = rng.uniform(*spec.radius)
            margin = int(np.ceil(2 * radius)) + 2
            if 2 * margin >= min(h, w):
                continue
            row = rng.uniform(margin, h - 1 - margin)
            col = rng.uniform(margin, w - 1 - margin)
            ok = all(np.hypot(row - pr, col - pc) >= 2 * (radius + prad) + 3
                     for pr, pc, prad in placed)
            if ok:
                break
        contrast = rng.uniform(*spec.contrast)
        bump, mask = _blob(spec, rng, row, col, radius, contrast)
        if not mask.any():
            mask[round(row), round(col)] = True
        image += bump
        gt |= mask
        placed.append((row, col, radius))

        in_rows, in_cols = np.nonzero(mask)
        pick = int(rng.integers(len(in_rows)))
        coarse_pts.append((int(in_rows[pick]), int(in_cols[pick])))
        cr, cc_ = in_rows.mean(), in_cols.mean()
        d2 = (in_rows - cr) ** 2 + (in_cols - cc_) ** 2
        best = int(np.argmin(d2))
        centroid_pts.append((int(in_rows[best]), int(in_cols[best])))

    if spec.noise_std > 0:
        image = image + rng.normal(0.0, spec.noise_std, size=(h, w))
    image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return (
        image,
        gt,
        PointAnnotation(tuple(coarse_pts), PointKind.COARSE),
        PointAnnotation(tuple(centroid_pts), PointKind.CENTROID),
    )


class GroundTruthStore:
    """Holds dense masks for evaluation only; reads are counted."""

    def __init__(self):
        self._masks: dict[str, np.ndarray] = {}
        self.eval_reads = 0
        self.training_reads = 0

    def put(self, sample_id: str, mask: np.ndarray) -> None:
        frozen = np.asarray(mask, dtype=bool).copy()
        frozen.flags.writeable = False
        self._masks[sample_id] = frozen

    def eval_mask(self, sample_id: str) -> np.ndarray:
        self.eval_reads += 1
        return self._masks[sample_id]

    def training_mask(self, sample_id: str) -> np.ndarray:
        """Explicit training access, for the full-supervision baseline."""
        self.training_reads += 1
        return self._masks[sample_id]

    def ids(self) -> list[str]:
        return sorted(self._masks)

    def __len__(self) -> int:
        return len(self._masks)


@dataclass
class SceneMeta:
    id: str
    difficulty: str
    coarse: PointAnnotation
    centroid: PointAnnotation


def generate_dataset(n: int, easy_frac: float,
                     easy_spec: SceneSpec | None = None,
                     hard_spec: SceneSpec | None = None,
                     seed: int = 0,
                     kind: PointKind = PointKind.COARSE):
    """Build n records (preparation pool, empty pseudo-labels) plus store.

    Returns (records, store, metas); metas keep both annotation kinds for
    serialization.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    easy_spec = easy_spec or default_easy_spec()
    hard_spec = hard_spec or default_hard_spec()
    n_easy = int(round(n * easy_frac))
    seeds = np.random.SeedSequence(seed).spawn(n)
    records, metas = [], []
    store = GroundTruthStore()
    for i in range(n):
        spec = easy_spec if i < n_easy else hard_spec
        rng = np.random.Generator(np.random.PCG64(seeds[i]))
        image, gt, coarse, centroid = generate_scene(spec, rng)
        sample_id = f"{i:06d}"
        ann = coarse if kind is PointKind.COARSE else centroid
        records.append(SampleRecord(
            id=sample_id,
            image=GrayImage(image),
            annotation=ann,
            pseudo_label=SoftLabel.zeros(image.shape),
            pool=Pool.PREPARATION,
            admitted_epoch=None,
        ))
        store.put(sample_id, gt)
        metas.append(SceneMeta(sample_id, spec.difficulty, coarse, centroid))
    return records, store, metas


# ---------------------------------------------------------------------------
# On-disk dataset layout: images/, gt_masks/, labels.json
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    n: int = 200
    easy_frac: float = 0.5
    height: int = 64
    width: int = 64
    n_targets: tuple[int, int] = (1, 3)
    easy_radius: tuple[float, float] = (2.0, 4.0)
    hard_radius: tuple[float, float] = (1.0, 2.5)
    easy_contrast: tuple[float, float] = (0.6, 0.95)
    hard_contrast: tuple[float, float] = (0.18, 0.4)
    easy_noise_std: float = 0.01
    hard_noise_std: float = 0.05
    seed: int = 42

    @classmethod
    def from_dict(cls, cfg: dict) -> "DatasetConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        coerced = {k: tuple(v) if isinstance(v, list) else v
                   for k, v in cfg.items()}
        return cls(**coerced)

    def specs(self) -> tuple[SceneSpec, SceneSpec]:
        common = dict(height=self.height, width=self.width,
                      n_targets=self.n_targets)
        easy = SceneSpec(difficulty="easy", background="flat",
                         radius=self.easy_radius,
                         contrast=self.easy_contrast,
                         noise_std=self.easy_noise_std, **common)
        hard = SceneSpec(difficulty="hard", background="clutter-noise",
                         radius=self.hard_radius,
                         contrast=self.hard_contrast,
                         noise_std=self.hard_noise_std, **common)
        return easy, hard


def write_dataset(out_dir: str | Path, config: DatasetConfig) -> dict:
    """Generate and write a dataset directory; returns a summary dict."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "gt_masks").mkdir(parents=True, exist_ok=True)
    easy_spec, hard_spec = config.specs()
    records, store, metas = generate_dataset(
        config.n, config.easy_frac, easy_spec, hard_spec, seed=config.seed)
    entries = []
    target_areas = []
    for rec, meta in zip(records, metas):
        write_gray(out / "images" / f"{rec.id}.png", rec.image.data, bits=16)
        gt = store.eval_mask(rec.id)
        write_mask(out / "gt_masks" / f"{rec.id}.png", gt)
        entries.append({
            "id": rec.id,
            "difficulty": meta.difficulty,
            "coarse": [[r, c] for r, c in meta.coarse.points],
            "centroid": [[r, c] for r, c in meta.centroid.points],
        })
        target_areas.append(int(gt.sum()))
    dump_json(out / "labels.json", {"samples": entries})
    return {
        "n": config.n,
        "easy": sum(1 for m in metas if m.difficulty == "easy"),
        "hard": sum(1 for m in metas if m.difficulty == "hard"),
        "mean_target_pixels": float(np.mean(target_areas)),
        "max_target_pixels": int(np.max(target_areas)),
    }


def load_dataset(dataset_dir: str | Path, kind: PointKind = PointKind.COARSE):
    """Load a dataset directory into records plus a ground-truth store."""
    root = Path(dataset_dir)
    meta = json.loads((root / "labels.json").read_text())
    records = []
    store = GroundTruthStore()
    for entry in meta["samples"]:
        sample_id = entry["id"]
        image = read_gray(root / "images" / f"{sample_id}.png")
        gt = read_mask(root / "gt_masks" / f"{sample_id}.png")
        pts = entry["coarse"] if kind is PointKind.COARSE else entry["centroid"]
        records.append(SampleRecord(
            id=sample_id,
            image=GrayImage(image),
            annotation=PointAnnotation(
                tuple((int(r), int(c)) for r, c in pts), kind),
            pseudo_label=SoftLabel.zeros(image.shape),
            pool=Pool.PREPARATION,
            admitted_epoch=None,
        ))
        store.put(sample_id, gt)
    return records, store
