import numpy as np
import pytest

from depthlab.core import CameraIntrinsics, DepthMap


def depth_from(values, mask=None) -> DepthMap:
    """DepthMap from a nested list / array (NaN rows allowed)."""
    arr = np.asarray(values, dtype=np.float64)
    return DepthMap(arr, mask)


def random_depth(rng, h=8, w=8, invalid_frac=0.0, lo=0.5, hi=5.0) -> DepthMap:
    mask = rng.random((h, w)) >= invalid_frac
    values = np.where(mask, rng.uniform(lo, hi, (h, w)), np.nan)
    return DepthMap(values, mask)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def centered_unit_intrinsics():
    return CameraIntrinsics(fx=1.0, fy=1.0, cx=0.0, cy=0.0)
