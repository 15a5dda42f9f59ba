import numpy as np
import pytest

from palseg.core_types import Hyperparams
from palseg.imaging import extract_edges
from palseg.loss import EPS, LossOutput, bce_loss, dice_loss, eedm_loss, focal_loss

HP = Hyperparams()


def finite_difference(fn, pred, idx, h=1e-6):
    p_plus = pred.copy()
    p_plus[idx] += h
    p_minus = pred.copy()
    p_minus[idx] -= h
    return (fn(p_plus).value - fn(p_minus).value) / (2 * h)


def random_pair(rng, shape=(8, 8), fg=0.15):
    pred = rng.uniform(0.05, 0.95, size=shape)
    target = (rng.random(shape) < fg).astype(np.float64)
    return pred, target


class TestEedmValue:
    def test_perfect_prediction_is_tiny(self):
        target = np.zeros((8, 8))
        target[3:5, 3:5] = 1.0
        out = eedm_loss(target.copy(), target, HP)
        assert 0.0 <= out.value < 1e-5

    def test_two_by_two_median_mining(self):
        # background-only target keeps weights at 1; choose predictions so
        # the raw losses are 0.1, 0.2, 0.3, 0.4. median 0.25 -> mined set
        # {0.3, 0.4} -> loss 0.35
        losses = np.array([[0.1, 0.2], [0.3, 0.4]])
        pred = 1.0 - np.exp(-losses)
        target = np.zeros((2, 2))
        out = eedm_loss(pred, target, HP)
        assert out.value == pytest.approx(0.35, abs=1e-9)
        assert np.count_nonzero(out.gradient) == 2

    def test_single_edge_pixel_weighted_by_alpha(self):
        pred = np.array([[0.7]])
        target = np.array([[1.0]])
        raw = -np.log(0.7)
        out = eedm_loss(pred, target, HP)
        assert out.value == pytest.approx(4.0 * raw, rel=1e-9)

    def test_no_foreground_reduces_to_mined_bce(self):
        rng = np.random.default_rng(0)
        pred = rng.uniform(0.05, 0.95, size=(6, 6))
        target = np.zeros((6, 6))
        out = eedm_loss(pred, target, HP)
        raw = -np.log(1.0 - pred)
        mined = raw[raw >= np.median(raw)]
        assert out.value == pytest.approx(mined.mean(), rel=1e-9)

    def test_mined_set_is_at_least_half(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            pred, target = random_pair(rng)
            out = eedm_loss(pred, target, HP)
            assert np.count_nonzero(out.gradient) >= pred.size // 2

    def test_non_binary_target_rejected(self):
        with pytest.raises(ValueError):
            eedm_loss(np.full((4, 4), 0.5), np.full((4, 4), 0.3), HP)


class TestEedmGradient:
    def test_matches_finite_differences_off_boundary(self):
        rng = np.random.default_rng(2)
        checked = skipped = 0
        for _ in range(60):
            pred, target = random_pair(rng)
            fn = lambda p: eedm_loss(p, target, HP)  # noqa: E731
            out = fn(pred)

            def mining_set(p):
                t = target
                edges = extract_edges(t > 0.5)
                w = np.where(edges, HP.alpha_edge, 1.0)
                pl = w * -(t * np.log(np.clip(p, EPS, 1 - EPS))
                           + (1 - t) * np.log(1 - np.clip(p, EPS, 1 - EPS)))
                return pl >= np.median(pl)

            base_set = mining_set(pred)
            idx = tuple(rng.integers(0, 8, size=2))
            h = 1e-6
            for sign in (1, -1):
                p2 = pred.copy()
                p2[idx] += sign * h
                if not np.array_equal(mining_set(p2), base_set):
                    skipped += 1
                    break
            else:
                fd = finite_difference(fn, pred, idx, h)
                an = out.gradient[idx]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                assert rel <= 1e-4
                checked += 1
        assert checked >= 30

    def test_gradient_zero_outside_mined_set(self):
        rng = np.random.default_rng(3)
        pred, target = random_pair(rng)
        out = eedm_loss(pred, target, HP)
        assert np.all(out.gradient[out.gradient == 0] == 0)
        assert np.count_nonzero(out.gradient) < pred.size


class TestPlainLosses:
    def test_bce_perfect(self):
        target = np.zeros((4, 4))
        target[1, 1] = 1.0
        out = bce_loss(target.copy(), target)
        assert 0.0 <= out.value < 1e-5

    def test_dice_empty_vs_empty_is_zero(self):
        zeros = np.zeros((4, 4))
        out = dice_loss(zeros, zeros)
        assert out.value == pytest.approx(0.0, abs=1e-12)

    def test_focal_reduces_to_bce(self):
        rng = np.random.default_rng(4)
        pred, target = random_pair(rng, shape=(5, 5))
        f = focal_loss(pred, target, gamma=0.0, alpha_f=1.0)
        b = bce_loss(pred, target)
        assert f.value == pytest.approx(b.value, rel=1e-9)
        np.testing.assert_allclose(f.gradient, b.gradient, rtol=1e-9)

    @pytest.mark.parametrize("loss_fn", [
        bce_loss,
        dice_loss,
        lambda p, t: focal_loss(p, t, gamma=2.0, alpha_f=0.25),
    ])
    def test_gradients_match_finite_differences(self, loss_fn):
        rng = np.random.default_rng(5)
        for _ in range(10):
            pred, target = random_pair(rng, shape=(6, 6))
            fn = lambda p: loss_fn(p, target)  # noqa: E731
            out = fn(pred)
            assert out.gradient.shape == pred.shape
            for _ in range(4):
                idx = tuple(rng.integers(0, 6, size=2))
                fd = finite_difference(fn, pred, idx)
                an = out.gradient[idx]
                rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
                assert rel <= 1e-4

    @pytest.mark.parametrize("loss_fn", [
        lambda p, t: eedm_loss(p, t, HP),
        bce_loss,
        dice_loss,
        lambda p, t: focal_loss(p, t),
    ])
    def test_nonnegative_and_shape_matched(self, loss_fn):
        rng = np.random.default_rng(6)
        for _ in range(10):
            pred, target = random_pair(rng)
            out = loss_fn(pred, target)
            assert out.value >= 0.0
            assert np.isfinite(out.value)
            assert out.gradient.shape == pred.shape
