"""Central finite-difference verification of the hand-derived gradients.

The relative error of a check is ||g_analytic - g_fd||_inf divided by
max(||g_analytic||_inf, ||g_fd||_inf): per-component ratios are ill-posed
wherever a gradient entry passes through zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import CameraIntrinsics, DepthMap
from . import losses
from .errors import ValidationError

DEFAULT_REL_STEP = 1e-5


def finite_diff_depth_gradient(fn: Callable[[DepthMap], float], depth: DepthMap,
                               rel_step: float = DEFAULT_REL_STEP) -> np.ndarray:
    """Central finite differences of fn w.r.t. each valid depth value."""
    grad = np.zeros_like(depth.values)
    vs, us = np.nonzero(depth.mask)
    for v, u in zip(vs, us):
        h = rel_step * abs(depth.values[v, u])
        bumped = depth.values.copy()
        bumped[v, u] = depth.values[v, u] + h
        hi = fn(DepthMap(bumped, depth.mask))
        bumped[v, u] = depth.values[v, u] - h
        lo = fn(DepthMap(bumped, depth.mask))
        grad[v, u] = (hi - lo) / (2.0 * h)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def random_instance(rng: np.random.Generator, min_side: int = 8,
                    max_side: int = 16, invalid_frac: float = 0.1):
    """Random (pred, gt, intrinsics) triple with depths in [0.5, 5]."""
    h = int(rng.integers(min_side, max_side + 1))
    w = int(rng.integers(min_side, max_side + 1))
    mask = rng.random((h, w)) >= invalid_frac
    # keep enough pixels for every loss to be well posed
    if mask.sum() < 16:
        mask[:] = True
    pred = np.where(mask, rng.uniform(0.5, 5.0, (h, w)), np.nan)
    gt = np.where(mask, rng.uniform(0.5, 5.0, (h, w)), np.nan)
    k = CameraIntrinsics(
        fx=float(rng.uniform(0.5, 2.0) * w),
        fy=float(rng.uniform(0.5, 2.0) * w),
        cx=(w - 1) / 2.0,
        cy=(h - 1) / 2.0,
    )
    return DepthMap(pred, mask), DepthMap(gt, mask), k


def _random_pairs(rng: np.random.Generator, depth: DepthMap, n_pairs: int = 32):
    flat = np.flatnonzero(depth.mask.ravel())
    pairs = []
    while len(pairs) < n_pairs:
        i, j = rng.choice(flat, size=2, replace=False)
        pairs.append(losses.OrdinalPair(int(i), int(j),
                                        int(rng.integers(-1, 2))))
    return pairs


@dataclass
class GradCheckTrial:
    trial: int
    error: float
    passed: bool


def loss_closure(name: str, gt: DepthMap, k: CameraIntrinsics,
                 rng: np.random.Generator, triplet_seed: int):
    """Returns fn(pred) -> LossResult for the named loss, with any sampling
    (ordinal pairs, triplets) frozen so the closure is deterministic."""
    if name == "mse":
        return lambda p: losses.mse_loss(p, gt)
    if name == "silog":
        return lambda p: losses.silog_loss(p, gt)
    if name == "ranking":
        pairs = _random_pairs(rng, gt)
        return lambda p: losses.ranking_loss(p, pairs)
    if name == "ssi":
        return lambda p: losses.ssi_loss(p, gt)
    if name == "vnl":
        cfg = losses.TripletConfig(count=40, seed=triplet_seed)
        trip = losses.sample_triplets(gt, k, cfg)
        return lambda p: losses.virtual_normal_loss(p, gt, k, cfg, trip)
    if name == "sn":
        return lambda p: losses.surface_normal_loss(p, gt, k)
    if name == "combined":
        cfg = losses.TripletConfig(count=40, seed=triplet_seed)
        trip = losses.sample_triplets(gt, k, cfg)
        return lambda p: losses.combined_loss(p, gt, k, cfg, triplets=trip)
    raise ValidationError(f"unknown loss {name!r}")


LOSS_NAMES = ("mse", "silog", "ranking", "ssi", "vnl", "sn", "combined")


def run_loss_gradcheck(name: str, trials: int, seed: int,
                       threshold: float = 1e-4,
                       rel_step: float = DEFAULT_REL_STEP) -> list[GradCheckTrial]:
    """Check one loss over seeded random instances; one result per trial."""
    rng = np.random.default_rng(seed)
    results = []
    for t in range(trials):
        pred, gt, k = random_instance(rng)
        fn = loss_closure(name, gt, k, rng, triplet_seed=seed * 1000003 + t)
        analytic = fn(pred).gradient
        numeric = finite_diff_depth_gradient(lambda p: fn(p).value, pred,
                                             rel_step)
        err = relative_gradient_error(analytic, numeric)
        results.append(GradCheckTrial(t, err, err < threshold))
    return results
