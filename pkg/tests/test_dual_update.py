import numpy as np
import pytest

from palseg.core_types import (GrayImage, Hyperparams, PointAnnotation,
                               PointKind, SampleRecord, SoftLabel)
from palseg.dual_update import (CouDecision, adaptive_threshold, cou_evaluate,
                                extract_candidates, fiu_update)

from reference_impl import reference_candidate_union, reference_fiu

HP = Hyperparams()


def record_with_points(points, shape=(16, 16)):
    h, w = shape
    img = GrayImage(np.full((max(h, 8), max(w, 8)), 0.3, dtype=np.float32))
    return SampleRecord(
        id="s", image=img,
        annotation=PointAnnotation(tuple(points), PointKind.COARSE),
        pseudo_label=SoftLabel.zeros(img.shape),
    )


def blobs(shape, *rects, value=0.9):
    out = np.zeros(shape, dtype=np.float32)
    for r0, c0, r1, c1 in rects:
        out[r0:r1, c0:c1] = value
    return out


class TestCouEvaluate:
    def test_perfect_two_target_prediction_admitted(self):
        rec = record_with_points([(3, 3), (10, 10)])
        pred = blobs(rec.image.shape, (2, 2, 5, 5), (9, 9, 12, 12))
        d = cou_evaluate(rec, pred, t_m=0.5, t_f=10.0, hp=HP)
        assert d.miss_rate == 0.0
        assert d.false_rate == 0.0
        assert d.admitted

    def test_half_miss_rate_boundary(self):
        rec = record_with_points([(3, 3), (10, 10)])
        pred = blobs(rec.image.shape, (2, 2, 5, 5))   # covers one point
        d = cou_evaluate(rec, pred, t_m=0.5, t_f=10.0, hp=HP)
        assert d.miss_rate == 0.5
        assert d.admitted
        tighter = cou_evaluate(rec, pred, t_m=0.4, t_f=10.0, hp=HP)
        assert not tighter.admitted

    def test_spurious_components_counted_and_removed(self):
        # 1 point covered, 3 spurious components -> false rate 3.0; with
        # the loose threshold still admitted and spurious pixels dropped
        rec = record_with_points([(3, 3)])
        pred = blobs(rec.image.shape, (2, 2, 5, 5), (9, 9, 11, 11),
                     (13, 2, 15, 4), (2, 12, 4, 14))
        d = cou_evaluate(rec, pred, t_m=0.5, t_f=10.0, hp=HP)
        assert d.false_rate == 3.0
        assert d.admitted
        lab = d.refined_label.data
        assert lab[9:11, 9:11].sum() == 0
        assert lab[13:15, 2:4].sum() == 0
        assert lab[2:4, 12:14].sum() == 0
        assert lab[3, 3] == 1.0
        assert (lab[2:5, 2:5] == 1.0).all()  # kept component, binary

    def test_rejected_when_false_rate_exceeds_threshold(self):
        rec = record_with_points([(3, 3)])
        pred = blobs(rec.image.shape, (2, 2, 5, 5), (9, 9, 11, 11))
        d = cou_evaluate(rec, pred, t_m=1.0, t_f=0.5, hp=HP)
        assert d.false_rate == 1.0
        assert not d.admitted
        assert d.refined_label is None

    def test_admission_monotone_in_thresholds(self):
        rng = np.random.default_rng(0)
        for _ in range(30):
            rec = record_with_points([(int(rng.integers(1, 15)),
                                       int(rng.integers(1, 15)))])
            pred = (rng.random(rec.image.shape) > 0.8).astype(np.float32) * 0.9
            tm1, tm2 = sorted(rng.random(2))
            tf1, tf2 = sorted(rng.random(2) * 20)
            d_loose = cou_evaluate(rec, pred, tm2, tf2, HP)
            d_tight = cou_evaluate(rec, pred, tm1, tf1, HP)
            if d_tight.admitted:
                assert d_loose.admitted

    def test_no_points_is_an_error(self):
        img = GrayImage(np.full((16, 16), 0.3, dtype=np.float32))
        with pytest.raises(ValueError):
            rec = SampleRecord(
                id="s", image=img,
                annotation=PointAnnotation((), PointKind.COARSE),
                pseudo_label=SoftLabel.zeros((16, 16)),
            )
            cou_evaluate(rec, np.zeros((16, 16), dtype=np.float32),
                         0.5, 10.0, HP)

    def test_decision_invariant_enforced(self):
        with pytest.raises(ValueError):
            CouDecision("x", 0.0, 0.0, True, None)


class TestAdaptiveThreshold:
    def test_empty_label_gives_half_peak(self):
        pred = np.zeros((33, 33), dtype=np.float32)
        pred[16, 16] = 1.0
        label = np.zeros((33, 33), dtype=np.float32)
        t = adaptive_threshold(pred, label, HP)
        assert t == pytest.approx(0.5, abs=1e-12)

    def test_label_at_full_budget(self):
        # max(pred)=0.8 and positives = h*w*r -> 0.8*(0.5+0.25) = 0.6
        h = w = 40
        hp = Hyperparams(r=0.01)
        n_pos = int(h * w * hp.r)           # 16 pixels, exactly h*w*r
        pred = np.full((h, w), 0.8, dtype=np.float64)
        label = np.zeros((h, w), dtype=np.float64)
        label.flat[:n_pos] = 1.0
        t = adaptive_threshold(pred, label, hp)
        assert t == pytest.approx(0.6, abs=1e-12)

    def test_zero_prediction_gives_zero(self):
        pred = np.zeros((20, 20), dtype=np.float32)
        label = np.ones((20, 20), dtype=np.float32)
        assert adaptive_threshold(pred, label, HP) == pytest.approx(0.0,
                                                                    abs=1e-12)

    def test_monotone_in_label_count_linear_in_peak(self):
        rng = np.random.default_rng(1)
        base = rng.random((20, 20)).astype(np.float32)
        label = np.zeros((20, 20), dtype=np.float32)
        prev = adaptive_threshold(base, label, HP)
        for k in range(1, 30, 5):
            label.flat[:k] = 1.0
            t = adaptive_threshold(base, label, HP)
            assert t >= prev
            prev = t
        t1 = adaptive_threshold(base, label, HP)
        t2 = adaptive_threshold((base * 0.5).astype(np.float32), label, HP)
        assert t2 == pytest.approx(t1 * 0.5, rel=1e-9)


class TestExtractCandidates:
    def test_prediction_equal_to_label_keeps_blob(self):
        hp = Hyperparams(r=0.05)            # blob within candidate budget
        label = blobs((16, 16), (6, 6, 9, 9), value=1.0)
        pred = label.copy()
        union, kept = extract_candidates(pred, label, hp)
        np.testing.assert_array_equal(union > 0, label > 0.5)
        assert len(kept) == 1

    def test_zero_prediction_gives_empty_union(self):
        label = blobs((16, 16), (6, 6, 9, 9), value=1.0)
        union, kept = extract_candidates(np.zeros((16, 16), dtype=np.float32),
                                         label, HP)
        assert union.sum() == 0
        assert kept == []

    def test_candidate_missing_all_centroids_eliminated(self):
        hp = Hyperparams(r=0.05)
        label = blobs((24, 24), (4, 4, 7, 7), value=1.0)
        # prediction peaks far from the label centroid, inside the crop
        pred = blobs((24, 24), (14, 14, 17, 17), value=0.9)
        union, kept = extract_candidates(pred, label, hp)
        assert union.sum() == 0
        assert kept == []

    def test_matches_reference_union(self):
        rng = np.random.default_rng(2)
        for trial in range(60):
            hp = Hyperparams(r=float(rng.choice([0.0015, 0.01, 0.05, 0.2])),
                             d=int(rng.choice([9, 13, 33])))
            label = np.zeros((16, 16), dtype=np.float32)
            for _ in range(int(rng.integers(1, 3))):
                r0 = int(rng.integers(0, 12))
                c0 = int(rng.integers(0, 12))
                label[r0:r0 + int(rng.integers(1, 4)),
                      c0:c0 + int(rng.integers(1, 4))] = rng.uniform(0.6, 1.0)
            pred = rng.random((16, 16)).astype(np.float32)
            union, _ = extract_candidates(pred, label, hp)
            expected = reference_candidate_union(pred, label, hp)
            np.testing.assert_array_equal(union > 0, expected)


class TestFiuUpdate:
    def test_identity_when_no_candidates_and_no_decay(self):
        hp = Hyperparams(lambda_decay=1.0)
        label = blobs((16, 16), (5, 5, 8, 8), value=0.8)
        pred = np.zeros((16, 16), dtype=np.float32)
        out = fiu_update(label, pred, points=(), hp=hp)
        np.testing.assert_array_equal(out.data, label)

    def test_blend_inside_candidates(self):
        hp = Hyperparams(r=0.05)
        label = blobs((16, 16), (6, 6, 9, 9), value=1.0)
        pred = blobs((16, 16), (6, 6, 9, 9), value=0.6)
        out = fiu_update(label, pred, points=(), hp=hp)
        assert out.data[7, 7] == np.float32((np.float32(1.0)
                                             + np.float32(0.6))
                                            * np.float32(0.5))
        assert out.data[7, 7] == pytest.approx(0.8, abs=1e-6)

    def test_decay_outside_candidates(self):
        hp = Hyperparams(lambda_decay=0.97)
        label = np.full((16, 16), 0.4, dtype=np.float32)
        pred = np.zeros((16, 16), dtype=np.float32)
        out = fiu_update(label, pred, points=(), hp=hp)
        expected = np.float32(0.97) * np.float32(0.4)
        assert out.data[3, 3] == expected
        assert out.data[3, 3] == pytest.approx(0.388, abs=1e-6)

    def test_annotation_points_reset_to_one(self):
        hp = Hyperparams()
        label = np.zeros((16, 16), dtype=np.float32)
        label[4, 4] = 0.2
        out = fiu_update(label, np.zeros_like(label), points=((4, 4),), hp=hp)
        assert out.data[4, 4] == 1.0

    def test_bounded_output(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            hp = Hyperparams(r=float(rng.choice([0.0015, 0.05])))
            label = rng.random((12, 12)).astype(np.float32)
            pred = rng.random((12, 12)).astype(np.float32)
            out = fiu_update(label, pred, points=((2, 2),), hp=hp)
            assert float(out.data.min()) >= 0.0
            assert float(out.data.max()) <= 1.0

    def test_pure_decay_law_on_non_annotation_pixels(self):
        # empty candidate union: every non-annotation pixel decays exactly
        hp = Hyperparams(lambda_decay=0.9)
        rng = np.random.default_rng(4)
        label = (rng.random((16, 16)) * 0.45).astype(np.float32)
        pred = np.zeros((16, 16), dtype=np.float32)
        points = ((5, 5),)
        out = fiu_update(label, pred, points, hp)
        lam = np.float32(0.9)
        mask = np.ones((16, 16), dtype=bool)
        mask[5, 5] = False
        np.testing.assert_array_equal(out.data[mask], (lam * label)[mask])

    def test_bit_exact_against_reference(self):
        rng = np.random.default_rng(5)
        for trial in range(120):
            hp = Hyperparams(
                r=float(rng.choice([0.0015, 0.01, 0.05, 0.2])),
                lambda_decay=float(rng.choice([1.0, 0.97, 0.8])),
                d=int(rng.choice([9, 33])),
            )
            label = np.zeros((16, 16), dtype=np.float32)
            for _ in range(int(rng.integers(1, 3))):
                r0 = int(rng.integers(0, 13))
                c0 = int(rng.integers(0, 13))
                label[r0:r0 + int(rng.integers(1, 4)),
                      c0:c0 + int(rng.integers(1, 4))] = rng.uniform(0.4, 1.0)
            pred = rng.random((16, 16)).astype(np.float32)
            points = ((int(rng.integers(0, 16)), int(rng.integers(0, 16))),)
            ours = fiu_update(label, pred, points, hp).data
            theirs = reference_fiu(label, pred, points, hp)
            np.testing.assert_array_equal(ours, theirs)
