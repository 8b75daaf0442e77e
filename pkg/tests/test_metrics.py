"""Metrics tests: losses against loop references, cloud metrics vs brute force."""

import numpy as np
import pytest

from mvsbisect.metrics import (CloudMetrics, LossWeights, bce, cloud_accuracy_completeness,
                               depth_error_stats, gt_mask, masked_bce_loss, multiscale_loss)


class TestGtMaskReExport:
    def test_same_object_as_decision_oracle(self):
        from mvsbisect.decision import ground_truth_oracle
        assert gt_mask is ground_truth_oracle

    def test_front_and_equality_cases(self):
        assert gt_mask(np.array([[1.0]]), np.array([[0.5]])).values[0, 0] == 1.0
        assert gt_mask(np.array([[2.0]]), np.array([[0.5]])).values[0, 0] == 0.0


class TestBce:
    def test_perfect_prediction_near_zero(self):
        assert bce(1.0, 1.0) == pytest.approx(1.0000000494736474e-07, rel=1e-9)
        assert bce(0.0, 0.0) == pytest.approx(1.0000000494736474e-07, rel=1e-9)

    def test_half_gives_ln2(self):
        for t in (0.0, 0.3, 1.0):
            assert bce(0.5, t) == pytest.approx(0.6931471805599453, abs=1e-15)

    def test_closed_form(self):
        assert bce(0.9, 1.0) == pytest.approx(0.10536051565782628, abs=1e-12)

    def test_nonnegative(self, rng):
        b = rng.uniform(0, 1, size=1000)
        t = rng.uniform(0, 1, size=1000)
        assert np.all(bce(b, t) >= 0.0)


class TestMaskedBceLoss:
    def test_perfect_prediction(self, rng):
        t = (rng.uniform(size=(8, 8)) > 0.5).astype(float)
        loss, defined = masked_bce_loss(t, t, np.ones((8, 8)))
        assert defined
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_half_prediction_with_partial_validity(self, rng):
        v = np.zeros((10, 10))
        v[:5] = 1.0
        b = np.full((10, 10), 0.5)
        t = rng.uniform(size=(10, 10))
        loss, defined = masked_bce_loss(b, t, v)
        assert defined
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_matches_double_loop_reference(self, rng):
        for _ in range(100):
            h, w = rng.integers(2, 9, size=2)
            b = rng.uniform(0, 1, size=(h, w))
            t = rng.uniform(0, 1, size=(h, w))
            v = (rng.uniform(size=(h, w)) > 0.4).astype(float)
            total, count = 0.0, 0
            for y in range(h):
                for x in range(w):
                    if v[y, x] > 0:
                        p = min(max(b[y, x], 1e-7), 1 - 1e-7)
                        total += -(t[y, x] * np.log(p) + (1 - t[y, x]) * np.log(1 - p))
                        count += 1
            loss, defined = masked_bce_loss(b, t, v)
            if count == 0:
                assert not defined
            else:
                assert abs(loss - total / count) < 1e-9

    def test_invariant_to_invalid_pixels(self, rng):
        b = rng.uniform(0, 1, size=(6, 6))
        t = rng.uniform(0, 1, size=(6, 6))
        v = (rng.uniform(size=(6, 6)) > 0.5).astype(float)
        loss1, _ = masked_bce_loss(b, t, v)
        b2 = b.copy()
        b2[v == 0] = rng.uniform(size=int((v == 0).sum()))
        loss2, _ = masked_bce_loss(b2, t, v)
        assert loss1 == loss2

    def test_no_valid_pixels_flagged(self):
        loss, defined = masked_bce_loss(np.ones((2, 2)), np.ones((2, 2)), np.zeros((2, 2)))
        assert loss == 0.0
        assert not defined


class TestMultiscaleLoss:
    def test_zero(self):
        assert multiscale_loss([0.0, 0.0, 0.0]) == 0.0

    def test_unit_losses_default_weights(self):
        assert multiscale_loss([1.0, 1.0, 1.0], LossWeights()) == pytest.approx(1.75)

    def test_only_full_resolution(self):
        assert multiscale_loss([5.0, 7.0, 2.5], (0.0, 0.0, 1.0)) == 2.5

    def test_negative_weight_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(l0=-0.1)


class TestDepthErrorStats:
    def test_perfect(self, rng):
        d = rng.uniform(1, 3, size=(8, 8))
        s = depth_error_stats(d, d)
        assert s["depth_mean_abs"] == 0.0
        assert s["inv_median_abs"] == 0.0
        assert s["depth_frac_within"] == 1.0

    def test_constant_offset(self):
        d = np.full((4, 4), 2.0)
        s = depth_error_stats(d + 0.25, d)
        assert s["depth_mean_abs"] == pytest.approx(0.25)
        assert s["depth_median_abs"] == pytest.approx(0.25)

    def test_matches_loop_reference(self, rng):
        d = rng.uniform(1, 3, size=(9, 7))
        g = rng.uniform(1, 3, size=(9, 7))
        v = (rng.uniform(size=(9, 7)) > 0.3)
        s = depth_error_stats(d, g, v, delta=0.05)
        errs, inv_errs = [], []
        for y in range(9):
            for x in range(7):
                if v[y, x]:
                    errs.append(abs(d[y, x] - g[y, x]))
                    inv_errs.append(abs(1 / d[y, x] - 1 / g[y, x]))
        assert abs(s["depth_mean_abs"] - np.mean(errs)) < 1e-9
        assert abs(s["depth_median_abs"] - np.median(errs)) < 1e-9
        assert abs(s["inv_mean_abs"] - np.mean(inv_errs)) < 1e-9
        assert abs(s["depth_frac_within"] - np.mean(np.array(errs) <= 0.05)) < 1e-9


def _brute_force_metrics(pred, gt, tau):
    d_pg = np.array([np.min(np.linalg.norm(gt - p, axis=1)) for p in pred])
    d_gp = np.array([np.min(np.linalg.norm(pred - g, axis=1)) for g in gt])
    acc = 100.0 * float((d_pg <= tau).mean())
    cmp_ = 100.0 * float((d_gp <= tau).mean())
    f = 2 * acc * cmp_ / (acc + cmp_) if acc + cmp_ > 0 else 0.0
    return acc, cmp_, f


class TestCloudMetrics:
    def test_self_comparison_perfect(self, rng):
        pts = rng.normal(size=(200, 3))
        m = cloud_accuracy_completeness(pts, pts, tau=1e-6)
        assert m.accuracy == 100.0
        assert m.completeness == 100.0
        assert m.aggregate == 100.0

    def test_harmonic_mean_arithmetic(self):
        m = CloudMetrics(accuracy=80.0, completeness=40.0,
                         aggregate=2 * 80 * 40 / 120.0, threshold=0.1, percentage=True)
        assert m.aggregate == pytest.approx(53.333333333333336)

    def test_matches_brute_force_oracle(self, rng):
        for _ in range(5):
            n_p = int(rng.integers(5, 500))
            n_g = int(rng.integers(5, 500))
            pred = rng.normal(size=(n_p, 3))
            gt = rng.normal(size=(n_g, 3))
            tau = float(rng.uniform(0.05, 1.0))
            m = cloud_accuracy_completeness(pred, gt, tau=tau)
            acc, cmp_, f = _brute_force_metrics(pred, gt, tau)
            assert m.accuracy == pytest.approx(acc, abs=1e-12)
            assert m.completeness == pytest.approx(cmp_, abs=1e-12)
            assert m.aggregate == pytest.approx(f, abs=1e-9)

    def test_symmetry_under_swap(self, rng):
        pred = rng.normal(size=(60, 3))
        gt = rng.normal(size=(80, 3))
        a = cloud_accuracy_completeness(pred, gt, tau=0.3)
        b = cloud_accuracy_completeness(gt, pred, tau=0.3)
        assert a.accuracy == b.completeness
        assert a.completeness == b.accuracy

    def test_f_between_min_and_max(self, rng):
        for _ in range(20):
            pred = rng.normal(size=(30, 3))
            gt = rng.normal(size=(30, 3)) * rng.uniform(0.5, 2.0)
            m = cloud_accuracy_completeness(pred, gt, tau=0.4)
            if m.accuracy + m.completeness == 0:
                continue
            lo = min(m.accuracy, m.completeness)
            hi = max(m.accuracy, m.completeness)
            assert lo - 1e-9 <= m.aggregate <= hi + 1e-9

    def test_distance_mode(self, rng):
        pred = rng.normal(size=(50, 3))
        gt = pred + 0.001
        m = cloud_accuracy_completeness(pred, gt, tau=1.0, percentage=False)
        assert not m.percentage
        assert m.accuracy == pytest.approx(np.sqrt(3) * 0.001, rel=1e-6)
        assert m.aggregate == pytest.approx(m.accuracy / 2 + m.completeness / 2)

    def test_empty_prediction_flagged(self):
        gt = np.zeros((5, 3))
        m = cloud_accuracy_completeness(np.zeros((0, 3)), gt, tau=0.1)
        assert not m.accuracy_defined
        assert np.isnan(m.accuracy)
        assert m.completeness == 0.0

    def test_empty_gt_rejected(self):
        with pytest.raises(ValueError):
            cloud_accuracy_completeness(np.zeros((5, 3)), np.zeros((0, 3)), tau=0.1)
