"""Stereo-flow filtering: thresholds at their boundaries, the validity
gate, disparity conversion, and pipeline bookkeeping."""

import numpy as np
import pytest

from depthlab import stereo
from depthlab.errors import NumericalError, ValidationError


def flow_of(dx, dy=None, mask=None):
    dx = np.asarray(dx, dtype=float)
    dy = np.zeros_like(dx) if dy is None else np.asarray(dy, dtype=float)
    mask = np.ones(dx.shape, bool) if mask is None else np.asarray(mask, bool)
    return stereo.FlowField(dx, dy, mask)


def consistent_pair(h=6, w=8, shift=-3.0):
    """Left field moving every pixel `shift` columns, right field exactly
    reversing it (round-trip error zero). Left pixels whose match would
    leave the image are masked out up front."""
    targets = np.arange(w) + shift
    in_bounds = (np.rint(targets) >= 0) & (np.rint(targets) < w)
    lmask = np.zeros((h, w), bool)
    lmask[:, in_bounds] = True
    left = flow_of(np.full((h, w), shift), mask=lmask)
    right = flow_of(np.full((h, w), -shift))
    return left, right


class TestVerticalFilter:
    def test_boundary_value_kept(self):
        f = flow_of(np.ones((2, 2)), dy=np.full((2, 2), 5.0))
        assert stereo.vertical_filter(f).n_valid == 4

    def test_zero_dy_is_identity(self):
        f = flow_of(np.ones((3, 3)))
        out = stereo.vertical_filter(f)
        np.testing.assert_array_equal(out.mask, f.mask)

    def test_rule_application(self):
        # |dy| of (0, 5.01, -6, 3): the 5.01 and -6 pixels are removed
        f = flow_of(np.ones((1, 4)), dy=[[0.0, 5.01, -6.0, 3.0]])
        out = stereo.vertical_filter(f)
        assert out.mask.tolist() == [[True, False, False, True]]

    def test_idempotent(self, rng):
        f = flow_of(np.ones((5, 5)), dy=rng.uniform(-8, 8, (5, 5)))
        once = stereo.vertical_filter(f)
        twice = stereo.vertical_filter(once)
        np.testing.assert_array_equal(once.mask, twice.mask)

    def test_only_shrinks_mask(self, rng):
        f = flow_of(np.ones((5, 5)), dy=rng.uniform(-8, 8, (5, 5)),
                    mask=rng.random((5, 5)) > 0.3)
        out = stereo.vertical_filter(f)
        assert not (out.mask & ~f.mask).any()


class TestLrConsistencyFilter:
    def test_consistent_pair_untouched(self):
        left, right = consistent_pair()
        out = stereo.lr_consistency_filter(left, right)
        assert out.n_valid == left.n_valid

    def test_out_of_bounds_match_removed(self):
        left = flow_of(np.full((2, 2), 10.0))  # points far outside
        right = flow_of(np.zeros((2, 2)))
        assert stereo.lr_consistency_filter(left, right).n_valid == 0

    def test_threshold_rule(self):
        # dx_L = -10, dx_R at the match = 12.5: |2.5| > 2 removed
        h, w = 3, 16
        left_dx = np.zeros((h, w))
        right_dx = np.zeros((h, w))
        left_dx[1, 12] = -10.0
        right_dx[1, 2] = 12.5
        out = stereo.lr_consistency_filter(flow_of(left_dx), flow_of(right_dx))
        assert not out.mask[1, 12]

    def test_boundary_error_kept(self):
        h, w = 3, 16
        left_dx = np.zeros((h, w))
        right_dx = np.zeros((h, w))
        left_dx[1, 12] = -10.0
        right_dx[1, 2] = 12.0  # |left + right| = 2.0 exactly
        out = stereo.lr_consistency_filter(flow_of(left_dx), flow_of(right_dx))
        assert out.mask[1, 12]
        right_dx[1, 2] = 12.0 + 1e-6
        out = stereo.lr_consistency_filter(flow_of(left_dx), flow_of(right_dx))
        assert not out.mask[1, 12]

    def test_invalid_right_pixel_removes_match(self):
        left, right = consistent_pair(shift=-3.0)
        rmask = right.mask.copy()
        rmask[2, 1] = False  # match target of left pixel (2, 4)
        right = stereo.FlowField(right.dx, right.dy, rmask)
        out = stereo.lr_consistency_filter(left, right)
        assert not out.mask[2, 4]

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            stereo.lr_consistency_filter(flow_of(np.zeros((2, 2))),
                                         flow_of(np.zeros((3, 3))))

    def test_idempotent(self):
        left, right = consistent_pair()
        lmask = left.mask.copy()
        lmask[0, :] = False
        left = stereo.FlowField(left.dx, left.dy, lmask)
        once = stereo.lr_consistency_filter(left, right)
        twice = stereo.lr_consistency_filter(once, right)
        np.testing.assert_array_equal(once.mask, twice.mask)


class TestValidityGate:
    def test_all_valid_accepted(self):
        assert stereo.validity_gate(flow_of(np.ones((5, 5)))).accepted

    def test_exactly_threshold_accepted(self):
        mask = np.zeros((10, 10), bool)
        mask.ravel()[:30] = True  # exactly 30%
        report = stereo.validity_gate(flow_of(np.ones((10, 10)), mask=mask))
        assert report.accepted
        assert report.n_valid == 30

    def test_below_threshold_rejected(self):
        mask = np.zeros((10, 10), bool)
        mask.ravel()[:29] = True
        assert not stereo.validity_gate(flow_of(np.ones((10, 10)),
                                                mask=mask)).accepted


class TestDisparityToDepth:
    def test_median_normalization_constant(self):
        depth = stereo.disparity_to_depth(flow_of(np.full((3, 3), 4.0)))
        np.testing.assert_allclose(depth.values, 1.0)

    def test_fixed_scale(self):
        depth = stereo.disparity_to_depth(flow_of(np.full((2, 2), 4.0)),
                                          normalize=8.0)
        np.testing.assert_allclose(depth.values, 2.0)

    def test_median_one_hand_arithmetic(self):
        # |dx| in {1, 2, 4}: median depth must be 1 -> s = 2, depths (2, 1, .5)
        depth = stereo.disparity_to_depth(flow_of([[1.0, 2.0, 4.0]]))
        np.testing.assert_allclose(depth.values, [[2.0, 1.0, 0.5]])

    def test_sign_insensitive(self):
        depth = stereo.disparity_to_depth(flow_of([[-1.0, 2.0, -4.0]]))
        np.testing.assert_allclose(depth.values, [[2.0, 1.0, 0.5]])

    def test_near_zero_disparity_invalidated(self):
        depth = stereo.disparity_to_depth(flow_of([[1e-6, 2.0]]),
                                          normalize=1.0)
        assert depth.mask.tolist() == [[False, True]]

    def test_no_usable_pixels(self):
        with pytest.raises(NumericalError):
            stereo.disparity_to_depth(flow_of([[1e-9, 1e-9]]))

    def test_roundtrip_with_known_scale(self, rng):
        disparity = rng.uniform(1.0, 20.0, (5, 5))
        s = 3.5
        depth = stereo.disparity_to_depth(flow_of(disparity), normalize=s)
        # depth -> disparity with the same s is the identity
        back = s / depth.values
        np.testing.assert_allclose(back, disparity, rtol=1e-9)


class TestIngestPipeline:
    def test_clean_pair_accepted(self):
        left, right = consistent_pair(shift=-4.0)
        depth, report = stereo.ingest_pipeline(left, right)
        assert report.accepted
        assert report.n_removed_vertical == 0
        assert report.n_removed_lr == 0
        # constant disparity: unit median depth everywhere valid
        np.testing.assert_allclose(depth.values[depth.mask], 1.0)
        np.testing.assert_array_equal(depth.mask, left.mask)

    def test_vertical_outliers_reject_at_gate(self):
        # 60 initially valid pixels; 50 of them get vertical outliers,
        # leaving 10/100 valid at the gate (< 30%)
        left, right = consistent_pair(h=10, w=10, shift=-4.0)
        dy = left.dy.copy()
        flat_valid = np.argwhere(left.mask)
        for v, u in flat_valid[:50]:
            dy[v, u] = 9.0
        left = stereo.FlowField(left.dx, dy, left.mask)
        depth, report = stereo.ingest_pipeline(left, right)
        assert depth is None
        assert not report.accepted
        assert report.n_removed_vertical == 50
        assert report.n_valid == 10

    def test_double_failure_attributed_to_vertical(self):
        # one pixel fails both the vertical and the consistency rule:
        # it must be counted once, under the first stage
        left, right = consistent_pair(shift=-4.0)
        dy = left.dy.copy()
        dx = left.dx.copy()
        dy[3, 5] = 9.0     # vertical failure
        dx[3, 5] = -20.0   # would also fail consistency
        left = stereo.FlowField(dx, dy, left.mask)
        _, report = stereo.ingest_pipeline(left, right)
        assert report.n_removed_vertical == 1
        assert report.n_removed_lr == 0

    def test_counts_reconcile(self, rng):
        h, w = 12, 12
        mask = rng.random((h, w)) > 0.2
        left = stereo.FlowField(rng.uniform(-8, -2, (h, w)),
                                rng.uniform(-7, 7, (h, w)), mask)
        right = stereo.FlowField(rng.uniform(2, 8, (h, w)),
                                 np.zeros((h, w)),
                                 rng.random((h, w)) > 0.2)
        _, report = stereo.ingest_pipeline(left, right)
        initially_invalid = h * w - int(mask.sum())
        assert report.n_total == h * w
        assert report.n_valid == (report.n_total - initially_invalid
                                  - report.n_removed_vertical
                                  - report.n_removed_lr)

    def test_filters_only_shrink_valid_set(self):
        left, right = consistent_pair()
        after_v = stereo.vertical_filter(left)
        after_lr = stereo.lr_consistency_filter(after_v, right)
        assert after_v.n_valid <= left.n_valid
        assert after_lr.n_valid <= after_v.n_valid
