"""Three-phase training orchestration.

Phase layout over total_epochs: pre-start trains on the easy samples
selected up front; enhancement periodically admits preparation-pool
samples (with a linearly rising miss-rate threshold) and refines
training-pool labels; refinement keeps only the periodic label
refinement. Pool state is owned by the single-threaded loop and audited
every epoch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .core_types import (Hyperparams, Pool, SampleRecord, SoftLabel,
                         write_gray)
from .datagen import GroundTruthStore
from .dual_update import cou_evaluate, fiu_update
from .epg import epg_classify, points_only_label
from .loss import eedm_loss
from .metrics import evaluate
from .model import Predictor, TinySegNet

MODES = ("pal", "full-supervision", "points-only", "epg-only")


class AuditError(RuntimeError):
    """A scheduler invariant was violated mid-run."""


class EmptyTrainingPool(RuntimeError):
    """No sample survived easy-sample selection; dataset too hard."""


class Phase(str, Enum):
    PRESTART = "prestart"
    ENHANCEMENT = "enhancement"
    REFINEMENT = "refinement"


@dataclass(frozen=True)
class PhaseSchedule:
    total_epochs: int
    prestart_end: int
    refine_start: int
    update_period: int

    def __post_init__(self):
        if not (0 < self.prestart_end < self.refine_start < self.total_epochs):
            raise ValueError("need 0 < prestart_end < refine_start < total")
        if self.update_period < 1:
            raise ValueError("update_period must be >= 1")

    @classmethod
    def from_hyperparams(cls, hp: Hyperparams) -> "PhaseSchedule":
        return cls(
            total_epochs=hp.total_epochs,
            prestart_end=math.floor(hp.prestart_frac * hp.total_epochs),
            refine_start=math.floor(hp.refine_frac * hp.total_epochs),
            update_period=hp.update_period,
        )

    def phase(self, epoch: int) -> Phase:
        if epoch < self.prestart_end:
            return Phase.PRESTART
        if epoch < self.refine_start:
            return Phase.ENHANCEMENT
        return Phase.REFINEMENT


def tm_at(epoch: int, schedule: PhaseSchedule, hp: Hyperparams) -> float:
    """Miss-rate threshold: tm_init at the end of pre-start, rising
    linearly to 1.0 at the start of refinement, clamped afterwards."""
    if epoch < schedule.prestart_end:
        raise ValueError("miss-rate threshold is undefined during pre-start")
    span = schedule.refine_start - schedule.prestart_end
    frac = (epoch - schedule.prestart_end) / span
    return min(1.0, hp.tm_init + (1.0 - hp.tm_init) * frac)


def _on_period(epoch: int, schedule: PhaseSchedule) -> bool:
    return (epoch - schedule.prestart_end) % schedule.update_period == 0


def fires_cou(epoch: int, schedule: PhaseSchedule) -> bool:
    """Admission fires on the period during enhancement, skipping the
    first enhancement epoch so evaluation sees a post-phase-change model."""
    return (schedule.phase(epoch) is Phase.ENHANCEMENT
            and _on_period(epoch, schedule)
            and epoch != schedule.prestart_end)


def fires_fiu(epoch: int, schedule: PhaseSchedule) -> bool:
    """Label refinement fires on the period during enhancement and
    refinement, never during pre-start."""
    return (schedule.phase(epoch) is not Phase.PRESTART
            and _on_period(epoch, schedule))


def last_cou_epoch(schedule: PhaseSchedule) -> int | None:
    fired = [e for e in range(schedule.prestart_end, schedule.refine_start)
             if fires_cou(e, schedule)]
    return fired[-1] if fired else None


@dataclass
class RunReport:
    mode: str
    config: dict
    epochs: list[dict]
    final: dict
    records: list[SampleRecord] | None = None   # final pool state
    predictor: Predictor | None = None

    def to_json(self) -> dict:
        return {"mode": self.mode, "config": self.config,
                "epochs": self.epochs, "final": self.final}


class _Audit:
    """In-run invariant checks; raises AuditError on violation."""

    def __init__(self, n_samples: int, schedule: PhaseSchedule,
                 hp: Hyperparams, check_admission: bool):
        self.n = n_samples
        self.schedule = schedule
        self.check_admission = check_admission
        self.ever_training: set[str] = set()
        tm0 = tm_at(schedule.prestart_end, schedule, hp)
        tm1 = tm_at(schedule.refine_start, schedule, hp)
        if tm0 != hp.tm_init:
            raise AuditError(f"miss-rate threshold starts at {tm0}, "
                             f"expected {hp.tm_init}")
        if tm1 != 1.0:
            raise AuditError(f"miss-rate threshold ends at {tm1}, expected 1.0")

    def check(self, epoch: int, records: list[SampleRecord]) -> None:
        training = {r.id for r in records if r.pool is Pool.TRAINING}
        prep = {r.id for r in records if r.pool is Pool.PREPARATION}
        if len(training) + len(prep) != self.n:
            raise AuditError(f"epoch {epoch}: pools do not partition dataset")
        if not self.ever_training <= training:
            lost = sorted(self.ever_training - training)
            raise AuditError(f"epoch {epoch}: samples left the training "
                             f"pool: {lost}")
        self.ever_training |= training
        if (self.check_admission and epoch >= self.schedule.refine_start
                and prep):
            raise AuditError(f"epoch {epoch}: {len(prep)} samples never "
                             "entered the training pool")


def _binarize_labels(labels: np.ndarray, hp: Hyperparams) -> np.ndarray:
    return (labels > hp.binarize_threshold).astype(np.float32)


def _training_batches(records: list[SampleRecord], hp: Hyperparams,
                      rng: np.random.Generator, crop: int = 32):
    """Shuffled batches of (images, binarized labels), random-cropped."""
    order = rng.permutation(len(records))
    for start in range(0, len(order), hp.batch_size):
        chunk = order[start:start + hp.batch_size]
        images, labels = [], []
        for idx in chunk:
            rec = records[idx]
            img = rec.image.data
            lab = rec.pseudo_label.data
            h, w = img.shape
            if h > crop or w > crop:
                top = int(rng.integers(0, h - crop + 1)) if h > crop else 0
                left = int(rng.integers(0, w - crop + 1)) if w > crop else 0
                img = img[top:top + crop, left:left + crop]
                lab = lab[top:top + crop, left:left + crop]
            images.append(img)
            labels.append(lab)
        yield np.stack(images), _binarize_labels(np.stack(labels), hp)


def _predict_all(predictor: Predictor, records: list[SampleRecord],
                 batch: int = 16) -> dict[str, np.ndarray]:
    out = {}
    for start in range(0, len(records), batch):
        chunk = records[start:start + batch]
        probs = predictor.forward(np.stack([r.image.data for r in chunk]))
        for rec, prob in zip(chunk, probs):
            out[rec.id] = prob
    return out


def _label_quality(records: list[SampleRecord], store: GroundTruthStore,
                   hp: Hyperparams) -> float:
    """Mean IoU of binarized training-pool labels against hidden truth."""
    vals = []
    for rec in records:
        if rec.pool is not Pool.TRAINING:
            continue
        lab = rec.pseudo_label.data > hp.binarize_threshold
        gt = store.eval_mask(rec.id)
        inter = int((lab & gt).sum())
        union = int((lab | gt).sum())
        vals.append(inter / union if union else 1.0)
    return float(np.mean(vals)) if vals else 0.0


def run_experiment(records: list[SampleRecord], store: GroundTruthStore,
                   hp: Hyperparams, predictor: Predictor | None = None,
                   mode: str = "pal", loss_fn=None, epoch_sink=None,
                   snapshot_dir: str | Path | None = None,
                   snapshot_every: int | None = None,
                   snapshot_count: int = 4) -> RunReport:
    """Run one full training experiment and return the report.

    records start in the preparation pool; the function works on copies
    and never mutates the caller's list. epoch_sink, when given, receives
    one metrics row per epoch. Snapshots of the first snapshot_count
    pseudo-labels are written at refinement firings (or every
    snapshot_every epochs when set).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if not records:
        raise ValueError("dataset is empty")
    records = sorted(records, key=lambda r: r.id)
    schedule = PhaseSchedule.from_hyperparams(hp)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(
        (hp.seed, 0xC0FFEE))))
    predictor = predictor or TinySegNet(seed=hp.seed, lr=hp.learning_rate)
    if loss_fn is None:
        loss_fn = lambda p, t: eedm_loss(p, t, hp)  # noqa: E731

    # -- initial pool assignment -------------------------------------------
    if mode == "pal" or mode == "epg-only":
        assigned = []
        for rec in records:
            cls, label = epg_classify(rec, hp)
            if cls == "easy":
                assigned.append(rec.admitted(label, epoch=0))
            else:
                assigned.append(rec.with_label(label))
        records = assigned
        if not any(r.pool is Pool.TRAINING for r in records):
            raise EmptyTrainingPool(
                "easy-sample selection admitted nothing; dataset too hard")
    elif mode == "points-only":
        records = [rec.admitted(points_only_label(rec), epoch=0)
                   for rec in records]
    else:  # full-supervision
        records = [
            rec.admitted(SoftLabel(store.training_mask(rec.id).astype(
                np.float32)), epoch=0)
            for rec in records
        ]

    updates_enabled = mode == "pal"
    audit = _Audit(len(records), schedule, hp,
                   check_admission=updates_enabled)
    force_epoch = None
    if updates_enabled:
        # everything still waiting is admitted at the final admission
        # firing; when the period does not fit inside enhancement, the
        # last enhancement epoch serves as the fallback
        force_epoch = last_cou_epoch(schedule)
        if force_epoch is None:
            force_epoch = schedule.refine_start - 1

    snapshot_ids = [r.id for r in records[:snapshot_count]]
    gts = [store.eval_mask(r.id) for r in records]
    rows: list[dict] = []

    for epoch in range(hp.total_epochs):
        phase = schedule.phase(epoch)

        # 1) gradient steps on the training pool only
        train_pool = [r for r in records if r.pool is Pool.TRAINING]
        losses = []
        for images, labels in _training_batches(train_pool, hp, rng):
            losses.append(predictor.train_step(images, labels, loss_fn))
        train_loss = float(np.mean(losses)) if losses else 0.0

        # 2) periodic admission of preparation-pool samples
        if updates_enabled and fires_cou(epoch, schedule):
            prep = [r for r in records if r.pool is Pool.PREPARATION]
            if prep:
                preds = _predict_all(predictor, prep)
                threshold = tm_at(epoch, schedule, hp)
                admitted = {}
                for rec in prep:
                    decision = cou_evaluate(rec, preds[rec.id], threshold,
                                            hp.tf, hp)
                    if decision.admitted:
                        admitted[rec.id] = decision.refined_label
                records = [
                    r.admitted(admitted[r.id], epoch) if r.id in admitted
                    else r
                    for r in records
                ]
        if updates_enabled and epoch == force_epoch:
            # everything still waiting enters with its point-only label
            records = [
                r.admitted(points_only_label(r), epoch)
                if r.pool is Pool.PREPARATION else r
                for r in records
            ]

        # 3) periodic refinement of training-pool labels
        if updates_enabled and fires_fiu(epoch, schedule):
            train_pool = [r for r in records if r.pool is Pool.TRAINING]
            preds = _predict_all(predictor, train_pool)
            refined = {
                rec.id: fiu_update(rec.pseudo_label, preds[rec.id],
                                   rec.annotation.points, hp)
                for rec in train_pool
            }
            records = [r.with_label(refined[r.id]) if r.id in refined else r
                       for r in records]

        audit.check(epoch, records)

        # 4) metrics against hidden ground truth
        all_preds = _predict_all(predictor, records)
        pred_masks = [all_preds[r.id] > 0.5 for r in records]
        result = evaluate(pred_masks, gts)
        n_train = sum(1 for r in records if r.pool is Pool.TRAINING)
        row = {
            "epoch": epoch,
            "phase": phase.value,
            "iou": result.iou,
            "niou": result.niou,
            "pd": result.pd,
            "fa": result.fa,
            "valid": result.valid,
            "pool_train": n_train,
            "pool_prep": len(records) - n_train,
            "label_iou_gt": _label_quality(records, store, hp),
            "train_loss": train_loss,
        }
        rows.append(row)
        if epoch_sink is not None:
            epoch_sink(row)

        # 5) label snapshots
        if snapshot_dir is not None:
            due = (fires_fiu(epoch, schedule) if snapshot_every is None
                   else epoch % snapshot_every == 0)
            if due:
                epoch_dir = Path(snapshot_dir) / f"epoch{epoch:03d}"
                epoch_dir.mkdir(parents=True, exist_ok=True)
                by_id = {r.id: r for r in records}
                for sid in snapshot_ids:
                    write_gray(epoch_dir / f"{sid}.png",
                               by_id[sid].pseudo_label.data, bits=8)

    final = dict(rows[-1])
    final["param_count"] = predictor.param_count
    return RunReport(mode=mode, config=hp.to_dict(), epochs=rows,
                     final=final, records=records, predictor=predictor)
