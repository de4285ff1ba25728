"""Alignment, Abs-Rel, WHDR, Si-RMS, and the aggregate evaluation report."""

import json

import numpy as np
import pytest

from depthlab import metrics
from depthlab.core import AffineMap, DepthMap
from depthlab.errors import NumericalError, ValidationError
from depthlab.losses import OrdinalPair

from conftest import depth_from, random_depth
from test_losses import ssi_oracle


class TestLsqAlign:
    def test_identity_at_equality(self):
        gt = depth_from([[1.0, 2.0, 3.0]])
        a = metrics.lsq_align(gt, gt)
        assert a.scale == pytest.approx(1.0, abs=1e-12)
        assert a.shift == pytest.approx(0.0, abs=1e-12)

    def test_exact_affine_recovery(self, rng):
        gt = random_depth(rng, 6, 6)  # depths in [0.5, 5]
        for a0, b0 in [(2.0, 0.4), (0.5, 0.2), (10.0, 0.45)]:
            pred = DepthMap((gt.values - b0) / a0, gt.mask)
            fit = metrics.lsq_align(pred, gt)
            assert fit.scale == pytest.approx(a0, rel=1e-10)
            assert fit.shift == pytest.approx(b0, rel=1e-10)
            residual = fit(pred.values[gt.mask]) - gt.values[gt.mask]
            assert np.abs(residual).max() < 1e-9

    def test_oracle_fixture(self):
        # same 2x2 solve as the scale/shift-invariant loss: h = (9/14, 1/2)
        h, _ = ssi_oracle([1.0, 2.0, 4.0], [1.0, 2.0, 3.0])
        fit = metrics.lsq_align(depth_from([[1.0, 2.0, 4.0]]),
                                depth_from([[1.0, 2.0, 3.0]]))
        assert fit.scale == pytest.approx(h[0], abs=1e-14)
        assert fit.shift == pytest.approx(h[1], abs=1e-14)

    def test_degenerate_constant_prediction(self):
        with pytest.raises(NumericalError, match="degenerate"):
            metrics.lsq_align(depth_from([[2.0, 2.0]]),
                              depth_from([[1.0, 3.0]]))


class TestAbsRel:
    def test_zero_at_equality(self, rng):
        d = random_depth(rng)
        assert metrics.abs_rel(d, d) == 0.0

    def test_single_pixel(self):
        assert metrics.abs_rel(depth_from([[2.0]]),
                               depth_from([[1.0]])) == pytest.approx(1.0)

    def test_hand_arithmetic(self):
        # (|1-2|/2 + |3-2|/2) / 2 = 0.5
        assert metrics.abs_rel(depth_from([[1.0, 3.0]]),
                               depth_from([[2.0, 2.0]])) == pytest.approx(0.5)


class TestWhdr:
    def _pred(self):
        return depth_from([[1.0, 2.0, 3.0, 4.0]])

    def test_all_correct(self):
        pairs = [(OrdinalPair(1, 0, 1), 1.0), (OrdinalPair(0, 3, -1), 1.0)]
        assert metrics.whdr(self._pred(), pairs) == 0.0

    def test_all_wrong(self):
        pairs = [(OrdinalPair(1, 0, -1), 1.0), (OrdinalPair(0, 3, 1), 1.0)]
        assert metrics.whdr(self._pred(), pairs) == 1.0

    def test_one_wrong_of_four(self):
        pairs = [(OrdinalPair(1, 0, 1), 1.0), (OrdinalPair(2, 0, 1), 1.0),
                 (OrdinalPair(3, 0, 1), 1.0), (OrdinalPair(0, 3, 1), 1.0)]
        assert metrics.whdr(self._pred(), pairs) == pytest.approx(0.25)

    def test_weights(self):
        pairs = [(OrdinalPair(1, 0, 1), 3.0), (OrdinalPair(0, 3, 1), 1.0)]
        assert metrics.whdr(self._pred(), pairs) == pytest.approx(0.25)

    def test_equality_threshold(self):
        # ratio 1.01 < 1 + tau for tau = 0.02: predicted relation is "equal"
        pred = depth_from([[1.0, 1.01]])
        assert metrics.whdr(pred, [(OrdinalPair(1, 0, 0), 1.0)]) == 0.0
        assert metrics.whdr(pred, [(OrdinalPair(1, 0, 0), 1.0)],
                            tau=0.005) == 1.0

    def test_invalid_endpoints_dropped(self):
        pred = DepthMap(np.array([[1.0, np.nan, 3.0]]))
        pairs = [(OrdinalPair(0, 1, 1), 5.0), (OrdinalPair(2, 0, 1), 1.0)]
        assert metrics.whdr(pred, pairs) == 0.0

    def test_monotone_transform_invariance_tau_zero(self, rng):
        pred = random_depth(rng, 5, 5)
        flat_valid = np.flatnonzero(pred.mask.ravel())
        prs = [(OrdinalPair(int(flat_valid[i]), int(flat_valid[i + 1]),
                            int(rng.integers(-1, 2))), 1.0)
               for i in range(0, len(flat_valid) - 1, 2)]
        base = metrics.whdr(pred, prs, tau=0.0)
        cubed = DepthMap(pred.values ** 3, pred.mask)
        assert metrics.whdr(cubed, prs, tau=0.0) == base

    def test_scaling_invariance_with_tau(self, rng):
        pred = random_depth(rng, 5, 5)
        flat_valid = np.flatnonzero(pred.mask.ravel())
        prs = [(OrdinalPair(int(flat_valid[i]), int(flat_valid[i + 1]),
                            int(rng.integers(-1, 2))), 1.0)
               for i in range(0, len(flat_valid) - 1, 2)]
        base = metrics.whdr(pred, prs, tau=0.02)
        for s in (0.1, 7.0):
            scaled = DepthMap(pred.values * s, pred.mask)
            assert metrics.whdr(scaled, prs, tau=0.02) == base

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            metrics.whdr(depth_from([[1.0]]), [])


class TestSiRms:
    def test_zero_at_equality(self, rng):
        d = random_depth(rng)
        assert metrics.si_rms(d, d) == pytest.approx(0.0, abs=1e-12)

    def test_scale_invariance(self, rng):
        gt = random_depth(rng)
        pred = DepthMap(3.7 * gt.values, gt.mask)
        assert metrics.si_rms(pred, gt) == pytest.approx(0.0, abs=1e-12)

    def test_hand_arithmetic(self):
        # z = (0, 1): sqrt(1/2 - 1/4) = 0.5
        pred = depth_from([[1.0, np.e]])
        gt = depth_from([[1.0, 1.0]])
        assert metrics.si_rms(pred, gt) == pytest.approx(0.5, rel=1e-12)

    def test_symmetry(self, rng):
        a = random_depth(rng, 5, 5)
        b = random_depth(np.random.default_rng(2), 5, 5)
        assert metrics.si_rms(a, b) == pytest.approx(metrics.si_rms(b, a),
                                                     rel=1e-12)

    def test_submask(self, rng):
        pred = random_depth(rng, 4, 4)
        gt = random_depth(np.random.default_rng(3), 4, 4)
        sub = np.zeros((4, 4), dtype=bool)
        sub[:2] = True
        full = metrics.si_rms(pred, gt)
        top = metrics.si_rms(pred, gt, submask=sub)
        assert top != pytest.approx(full)


class TestEvaluate:
    def test_exact_affine_prediction(self, rng):
        gt = random_depth(rng, 6, 6)
        pred = DepthMap(3.0 * gt.values + 2.0, gt.mask)
        report = metrics.evaluate(pred, gt)
        assert report.abs_rel == pytest.approx(0.0, abs=1e-10)
        assert report.si_rms == pytest.approx(0.0, abs=1e-9)
        assert report.pearson_r == pytest.approx(1.0, abs=1e-9)
        # the alignment maps prediction onto gt: inverse of (3, 2)
        assert report.alignment.scale == pytest.approx(1 / 3, rel=1e-9)
        assert report.alignment.shift == pytest.approx(-2 / 3, rel=1e-9)

    def test_equality_without_alignment(self, rng):
        gt = random_depth(rng, 5, 5)
        report = metrics.evaluate(gt, gt, metrics.EvalOptions(align="none"))
        assert report.abs_rel == 0.0
        assert report.si_rms == pytest.approx(0.0, abs=1e-12)
        assert report.alignment == AffineMap(1.0, 0.0)
        assert report.n_valid == gt.n_valid

    def test_aligned_abs_rel_hand_arithmetic(self):
        # aligned values (8/7, 25/14, 43/14) against (1, 2, 3):
        # abs_rel = (1/7 + 3/28 + 1/42) / 3 = 23/252
        pred = depth_from([[1.0, 2.0, 4.0]])
        gt = depth_from([[1.0, 2.0, 3.0]])
        h, _ = ssi_oracle([1.0, 2.0, 4.0], [1.0, 2.0, 3.0])
        aligned = h[0] * np.array([1.0, 2.0, 4.0]) + h[1]
        expected = float(np.mean(np.abs(aligned - [1, 2, 3]) / [1, 2, 3]))
        report = metrics.evaluate(pred, gt)
        assert expected == pytest.approx(23.0 / 252.0, rel=1e-12)
        assert report.abs_rel == pytest.approx(expected, rel=1e-12)
        assert report.abs_rel == pytest.approx(0.0913, abs=1e-4)

    def test_metrics_invariant_under_positive_affine(self, rng):
        gt = random_depth(rng, 8, 8, invalid_frac=0.2)
        pred_full = random_depth(np.random.default_rng(17), 8, 8)
        pred = DepthMap(np.where(gt.mask, pred_full.values, np.nan), gt.mask)
        base = metrics.evaluate(pred, gt)
        for a, b in [(0.3, 0.5), (2.0, 0.0), (5.0, 4.0)]:
            moved = DepthMap(a * pred.values + b, pred.mask)
            rep = metrics.evaluate(moved, gt)
            assert rep.abs_rel == pytest.approx(base.abs_rel, abs=1e-8)
            assert rep.si_rms == pytest.approx(base.si_rms, abs=1e-8)
            assert rep.pearson_r == pytest.approx(base.pearson_r, abs=1e-8)

    def test_submask_produces_split_si(self, rng):
        gt = random_depth(rng, 6, 6)
        pred = random_depth(np.random.default_rng(4), 6, 6)
        sub = np.zeros((6, 6), dtype=bool)
        sub[:, :3] = True
        report = metrics.evaluate(pred, gt, metrics.EvalOptions(submask=sub))
        assert report.si_masked is not None
        masked_in, masked_out = report.si_masked
        assert masked_in >= 0 and masked_out >= 0

    def test_negative_scale_warns(self):
        gt = depth_from([[1.0, 2.0, 3.0]])
        pred = depth_from([[3.0, 2.0, 1.0]])  # inverted
        with pytest.warns(UserWarning, match="negative scale"):
            report = metrics.evaluate(pred, gt)
        assert report.alignment.scale < 0

    def test_json_schema(self, rng):
        gt = random_depth(rng, 5, 5)
        pred = DepthMap(0.7 * gt.values + 0.2, gt.mask)
        report = metrics.evaluate(pred, gt)
        obj = report.to_json_dict()
        assert set(obj) == {"abs_rel", "whdr", "si_rms", "si_hum", "si_env",
                            "alignment", "n_valid", "pearson_r"}
        assert set(obj["alignment"]) == {"scale", "shift"}
        json.dumps(obj)  # serializable


class TestPairsCsv:
    def test_roundtrip(self, tmp_path):
        pairs = [(OrdinalPair(0, 5, 1), 1.0), (OrdinalPair(7, 2, 0), 2.5),
                 (OrdinalPair(3, 11, -1), 0.5)]
        path = tmp_path / "pairs.csv"
        metrics.write_pairs_csv(pairs, width=4, path=path)
        header = path.read_text().splitlines()[0]
        assert header == "i_x,i_y,j_x,j_y,label,weight"
        back = metrics.read_pairs_csv(path, width=4)
        assert back == pairs

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValidationError, match="header"):
            metrics.read_pairs_csv(path, width=4)
