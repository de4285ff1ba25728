"""Stereo-flow filtering pipeline: vertical-disparity rejection, forward/
backward (left-right) consistency rejection, the minimum-validity gate, and
disparity-to-depth conversion.

Flow fields hold the per-pixel match offsets between the two views of an
unrectified stereo pair; the horizontal component is the disparity. Depth is
recovered only up to scale (camera parameters are unknown), so conversion
normalizes to a unit median by default.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .core import DepthMap
from .errors import NumericalError, ValidationError

VERTICAL_THRESHOLD = 5.0
LR_THRESHOLD = 2.0
MIN_VALID_FRACTION = 0.30
MIN_ABS_DISPARITY = 1e-3


@dataclass
class FlowField:
    """Per-pixel match offsets (dx, dy) in pixels with a validity mask."""

    dx: np.ndarray
    dy: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.dx = np.asarray(self.dx, dtype=np.float64)
        self.dy = np.asarray(self.dy, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if not (self.dx.ndim == 2 and self.dx.shape == self.dy.shape
                and self.dx.shape == self.mask.shape):
            raise ValidationError("flow grids must share one 2-D shape")
        for grid in (self.dx, self.dy):
            if grid[self.mask].size and not np.all(np.isfinite(grid[self.mask])):
                raise ValidationError("valid flow entries must be finite")

    @property
    def width(self) -> int:
        return self.dx.shape[1]

    @property
    def height(self) -> int:
        return self.dx.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def copy_with_mask(self, mask: np.ndarray) -> "FlowField":
        return FlowField(self.dx.copy(), self.dy.copy(), mask)


@dataclass
class IngestReport:
    """Bookkeeping of one stereo pair through the filter pipeline."""

    n_total: int
    n_removed_vertical: int
    n_removed_lr: int
    n_valid: int
    accepted: bool

    def to_json_dict(self) -> dict:
        return {
            "n_total": self.n_total,
            "n_removed_vertical": self.n_removed_vertical,
            "n_removed_lr": self.n_removed_lr,
            "n_valid": self.n_valid,
            "accepted": self.accepted,
        }


def vertical_filter(flow: FlowField,
                    threshold: float = VERTICAL_THRESHOLD) -> FlowField:
    """Invalidate pixels whose vertical offset exceeds the threshold.

    The comparison is strict: |dy| equal to the threshold stays valid.
    """
    keep = flow.mask & ~(np.abs(flow.dy) > threshold)
    return flow.copy_with_mask(keep)


def lr_consistency_filter(left: FlowField, right: FlowField,
                          threshold: float = LR_THRESHOLD) -> FlowField:
    """Forward/backward disparity check on the left flow field.

    For each valid left pixel p the match p' = round(p + flow(p)) is looked
    up in the right field; p is invalidated when p' leaves the image, is
    invalid in the right field, or |dx_left(p) + dx_right(p')| exceeds the
    threshold (strictly).
    """
    if (left.height, left.width) != (right.height, right.width):
        raise ValidationError("left/right flow dimensions differ")
    h, w = left.height, left.width
    vs, us = np.nonzero(left.mask)
    tu = np.rint(us + left.dx[vs, us]).astype(np.int64)
    tv = np.rint(vs + left.dy[vs, us]).astype(np.int64)
    inside = (tu >= 0) & (tu < w) & (tv >= 0) & (tv < h)

    ok = np.zeros(len(us), dtype=bool)
    if np.any(inside):
        tui, tvi = tu[inside], tv[inside]
        matched = right.mask[tvi, tui]
        err = np.abs(left.dx[vs[inside], us[inside]] + right.dx[tvi, tui])
        ok[inside] = matched & ~(err > threshold)

    keep = np.zeros((h, w), dtype=bool)
    keep[vs[ok], us[ok]] = True
    return left.copy_with_mask(keep)


def validity_gate(flow: FlowField,
                  min_fraction: float = MIN_VALID_FRACTION) -> IngestReport:
    """Accept the field iff the valid fraction reaches min_fraction.

    Rejection is strict "less than", so a field at exactly the threshold is
    accepted. Removal counts are zero here; ``ingest_pipeline`` fills them.
    """
    total = flow.dx.size
    valid = flow.n_valid
    return IngestReport(n_total=total, n_removed_vertical=0, n_removed_lr=0,
                        n_valid=valid,
                        accepted=not (valid / total < min_fraction))


def disparity_to_depth(flow: FlowField,
                       normalize: Union[str, float] = "median_one",
                       eps: float = MIN_ABS_DISPARITY) -> DepthMap:
    """Convert horizontal offsets to depth d = s / |dx|.

    Pixels with |dx| <= eps are invalidated (depth would blow up). With
    normalize="median_one" the scale s is chosen so the median valid depth
    is 1; a float selects a fixed scale.
    """
    usable = flow.mask & (np.abs(flow.dx) > eps)
    if not np.any(usable):
        raise NumericalError("no valid pixels with usable disparity")
    inv = np.abs(flow.dx[usable]) ** -1.0
    if normalize == "median_one":
        scale = 1.0 / float(np.median(inv))
    elif isinstance(normalize, (int, float)):
        scale = float(normalize)
        if scale <= 0:
            raise ValidationError("fixed depth scale must be positive")
    else:
        raise ValidationError(f"unknown normalization {normalize!r}")
    values = np.full(flow.dx.shape, np.nan)
    values[usable] = scale * inv
    return DepthMap(values, usable)


@dataclass(frozen=True)
class IngestThresholds:
    vertical: float = VERTICAL_THRESHOLD
    lr: float = LR_THRESHOLD
    min_valid: float = MIN_VALID_FRACTION
    min_abs_disparity: float = MIN_ABS_DISPARITY


def ingest_pipeline(left: FlowField, right: FlowField,
                    thresholds: IngestThresholds = IngestThresholds(),
                    normalize: Union[str, float] = "median_one",
                    ) -> tuple[Optional[DepthMap], IngestReport]:
    """Run vertical filter, left-right consistency, the validity gate, and
    disparity conversion in that order. A pixel failing several rules is
    counted once, under the first rule that removed it. Rejected pairs
    return (None, report)."""
    v0 = left.n_valid
    after_vertical = vertical_filter(left, thresholds.vertical)
    v1 = after_vertical.n_valid
    after_lr = lr_consistency_filter(after_vertical, right, thresholds.lr)
    v2 = after_lr.n_valid

    report = IngestReport(
        n_total=left.dx.size,
        n_removed_vertical=v0 - v1,
        n_removed_lr=v1 - v2,
        n_valid=v2,
        accepted=not (v2 / left.dx.size < thresholds.min_valid),
    )
    if not report.accepted:
        return None, report
    depth = disparity_to_depth(after_lr, normalize, thresholds.min_abs_disparity)
    return depth, report
