import json

import numpy as np
import pytest

from palseg.core_types import (GrayImage, Hyperparams, PointAnnotation,
                               PointKind, Pool, SampleRecord, SoftLabel,
                               pgm_read, pgm_write, png_read, png_write,
                               read_gray, record_from_meta, record_meta,
                               validate, write_gray)


def make_record(pool=Pool.PREPARATION, admitted_epoch=None, label=None,
                points=((4, 5),)):
    img = GrayImage(np.full((16, 16), 0.5, dtype=np.float32))
    if label is None:
        label = np.zeros((16, 16), dtype=np.float32)
        for r, c in points:
            if 0 <= r < 16 and 0 <= c < 16:
                label[r, c] = 1.0
    return SampleRecord(
        id="000000",
        image=img,
        annotation=PointAnnotation(points, PointKind.COARSE),
        pseudo_label=SoftLabel(label),
        pool=pool,
        admitted_epoch=admitted_epoch,
    )


class TestTypes:
    def test_image_rejects_small_sides(self):
        with pytest.raises(ValueError):
            GrayImage(np.zeros((4, 16), dtype=np.float32))

    def test_image_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            GrayImage(np.full((16, 16), 1.5, dtype=np.float32))

    def test_label_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            SoftLabel(np.full((8, 8), -0.1, dtype=np.float32))

    def test_annotation_rejects_duplicates(self):
        with pytest.raises(ValueError):
            PointAnnotation(((1, 1), (1, 1)), PointKind.COARSE)

    def test_data_is_read_only(self):
        img = GrayImage(np.zeros((8, 8), dtype=np.float32))
        with pytest.raises(ValueError):
            img.data[0, 0] = 1.0


class TestValidate:
    def test_well_formed_record_ok(self):
        assert validate(make_record()) == []

    def test_out_of_bounds_point(self):
        rec = make_record(points=((-1, 0),))
        assert "point out of bounds" in validate(rec)

    def test_training_record_needs_positive_points(self):
        rec = make_record(pool=Pool.TRAINING, admitted_epoch=3,
                          label=np.zeros((16, 16), dtype=np.float32))
        assert "point not positive" in validate(rec)

    def test_training_record_needs_admitted_epoch(self):
        rec = make_record(pool=Pool.TRAINING, admitted_epoch=None)
        assert "admitted_epoch missing" in validate(rec)

    def test_preparation_record_rejects_admitted_epoch(self):
        rec = make_record(pool=Pool.PREPARATION, admitted_epoch=2)
        assert "admitted_epoch set" in validate(rec)

    def test_validate_is_pure(self):
        rec = make_record(points=((99, 0), (4, 5)))
        assert validate(rec) == validate(rec)


class TestSerialization:
    @pytest.mark.parametrize("dtype,maxval", [(np.uint8, 255),
                                              (np.uint16, 65535)])
    def test_pgm_round_trip(self, tmp_path, dtype, maxval):
        rng = np.random.default_rng(0)
        raw = rng.integers(0, maxval + 1, size=(12, 9)).astype(dtype)
        pgm_write(tmp_path / "x.pgm", raw)
        back = pgm_read(tmp_path / "x.pgm")
        assert back.dtype == dtype
        np.testing.assert_array_equal(back, raw)

    @pytest.mark.parametrize("dtype,maxval", [(np.uint8, 255),
                                              (np.uint16, 65535)])
    def test_png_round_trip(self, tmp_path, dtype, maxval):
        rng = np.random.default_rng(1)
        raw = rng.integers(0, maxval + 1, size=(10, 14)).astype(dtype)
        png_write(tmp_path / "x.png", raw)
        np.testing.assert_array_equal(png_read(tmp_path / "x.png"), raw)

    @pytest.mark.parametrize("suffix", [".pgm", ".png"])
    @pytest.mark.parametrize("bits", [8, 16])
    def test_float_round_trip_is_bit_exact(self, tmp_path, suffix, bits):
        # data on the quantization grid survives encode/decode unchanged
        rng = np.random.default_rng(2)
        scale = 255 if bits == 8 else 65535
        raw = rng.integers(0, scale + 1, size=(16, 16))
        data = (raw.astype(np.float32) / np.float32(scale)).astype(np.float32)
        path = tmp_path / f"y{suffix}"
        write_gray(path, data, bits=bits)
        back = read_gray(path)
        np.testing.assert_array_equal(back, data)
        # and a second encode emits identical bytes
        second = tmp_path / f"z{suffix}"
        write_gray(second, back, bits=bits)
        assert path.read_bytes() == second.read_bytes()

    def test_record_meta_round_trip(self):
        rec = make_record(pool=Pool.TRAINING, admitted_epoch=7)
        meta = json.loads(json.dumps(record_meta(rec)))
        back = record_from_meta(meta, rec.image, rec.pseudo_label)
        assert back == rec


class TestHyperparams:
    def test_defaults_satisfy_invariants(self):
        hp = Hyperparams()
        assert hp.prestart_frac == 0.2
        assert hp.refine_frac == 0.8
        assert hp.update_period == 5
        assert hp.tm_init == 0.2
        assert hp.lambda_decay == 0.97
        assert hp.tb == 0.5 and hp.k == 0.5
        assert hp.r == 0.0015
        assert hp.d == 33
        assert hp.alpha_edge == 4.0
        assert hp.recall_threshold == 0.8
        assert hp.learning_rate == 1e-3
        assert hp.batch_size == 16

    @pytest.mark.parametrize("bad", [
        {"prestart_frac": 0.9},           # >= refine_frac
        {"lambda_decay": 0.0},
        {"lambda_decay": 1.5},
        {"tb": 1.0},
        {"r": 0.0},
        {"d": 4},
        {"d": 1},
    ])
    def test_invariant_violations_raise(self, bad):
        with pytest.raises(ValueError):
            Hyperparams(**bad)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            Hyperparams.from_dict({"learning_rte": 1e-3})

    def test_dict_round_trip(self):
        hp = Hyperparams(total_epochs=30, seed=9)
        assert Hyperparams.from_dict(hp.to_dict()) == hp
