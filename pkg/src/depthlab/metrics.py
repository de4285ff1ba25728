"""Scale/shift alignment by least squares and the evaluation metrics:
absolute relative error, weighted ordinal disagreement (WHDR), and the
scale-invariant RMS of log-depth residuals, plus a linearity diagnostic
(Pearson r of aligned prediction against ground truth)."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import AffineMap, DepthMap
from .errors import NumericalError, ValidationError
from .losses import OrdinalPair, fit_scale_shift

DEFAULT_WHDR_TAU = 0.02

PAIRS_HEADER = ["i_x", "i_y", "j_x", "j_y", "label", "weight"]


def lsq_align(pred: DepthMap, gt: DepthMap) -> AffineMap:
    """Least-squares (scale, shift) mapping the prediction onto the ground
    truth: minimizes sum (a*d_i + b - d*_i)^2 over jointly valid pixels."""
    m = pred.joint_mask(gt)
    if int(m.sum()) < 2:
        raise ValidationError("alignment needs at least 2 jointly valid pixels")
    a, b = fit_scale_shift(pred.values[m], gt.values[m])
    return AffineMap(a, b)


def abs_rel(pred: DepthMap, gt: DepthMap) -> float:
    """Mean |d - d*| / d* over jointly valid pixels."""
    m = pred.joint_mask(gt)
    n = int(m.sum())
    if n == 0:
        raise ValidationError("no jointly valid pixels")
    return float(np.mean(np.abs(pred.values[m] - gt.values[m]) / gt.values[m]))


def _predicted_relation(di: np.ndarray, dj: np.ndarray, tau: float) -> np.ndarray:
    rel = np.zeros(di.shape, dtype=np.int64)
    rel[di / dj > 1.0 + tau] = 1
    rel[dj / di > 1.0 + tau] = -1
    return rel


def whdr(pred: DepthMap, pairs: Sequence[tuple[OrdinalPair, float]],
         tau: float = DEFAULT_WHDR_TAU) -> float:
    """Weighted fraction of ordinal pairs whose predicted relation (with
    ratio threshold tau for "equal") disagrees with the label. Pairs with a
    mask-invalid endpoint are dropped before weighting."""
    if not pairs:
        raise ValidationError("whdr needs at least one ordinal pair")
    flat = pred.values.ravel()
    flat_mask = pred.mask.ravel()
    kept_i, kept_j, labels, weights = [], [], [], []
    for pair, weight in pairs:
        if weight <= 0:
            raise ValidationError("whdr weights must be positive")
        if not (0 <= pair.i < flat.size and 0 <= pair.j < flat.size):
            raise ValidationError("ordinal pair index out of range")
        if flat_mask[pair.i] and flat_mask[pair.j]:
            kept_i.append(pair.i)
            kept_j.append(pair.j)
            labels.append(pair.label)
            weights.append(weight)
    if not kept_i:
        raise ValidationError("no ordinal pairs with valid endpoints")
    di = flat[np.array(kept_i)]
    dj = flat[np.array(kept_j)]
    wts = np.array(weights, dtype=np.float64)
    disagree = _predicted_relation(di, dj, tau) != np.array(labels)
    return float(np.sum(wts * disagree) / np.sum(wts))


def si_rms(pred: DepthMap, gt: DepthMap,
           submask: Optional[np.ndarray] = None) -> float:
    """Scale-invariant RMS: std of z_i = log d_i - log d*_i over the jointly
    valid pixels (optionally intersected with ``submask``)."""
    m = pred.joint_mask(gt)
    if submask is not None:
        submask = np.asarray(submask, dtype=bool)
        if submask.shape != m.shape:
            raise ValidationError("submask shape must match depth grid")
        m = m & submask
    n = int(m.sum())
    if n == 0:
        raise ValidationError("no pixels to evaluate")
    z = np.log(pred.values[m]) - np.log(gt.values[m])
    var = float(np.dot(z, z)) / n - (float(z.sum()) / n) ** 2
    return float(np.sqrt(max(var, 0.0)))


@dataclass
class EvalOptions:
    align: str = "lsq"                 # "lsq" or "none"
    pairs: Optional[Sequence[tuple[OrdinalPair, float]]] = None
    whdr_tau: float = DEFAULT_WHDR_TAU
    submask: Optional[np.ndarray] = None  # true = masked-in (e.g. people)

    def __post_init__(self):
        if self.align not in ("lsq", "none"):
            raise ValidationError(f"unknown alignment mode {self.align!r}")


@dataclass
class MetricsReport:
    abs_rel: float
    si_rms: float
    alignment: AffineMap
    n_valid: int
    pearson_r: float
    whdr: Optional[float] = None
    si_masked: Optional[tuple[float, float]] = None  # (masked-in, masked-out)

    def to_json_dict(self) -> dict:
        return {
            "abs_rel": self.abs_rel,
            "whdr": self.whdr,
            "si_rms": self.si_rms,
            "si_hum": None if self.si_masked is None else self.si_masked[0],
            "si_env": None if self.si_masked is None else self.si_masked[1],
            "alignment": {"scale": self.alignment.scale,
                          "shift": self.alignment.shift},
            "n_valid": self.n_valid,
            "pearson_r": self.pearson_r,
        }


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt(np.dot(xc, xc) * np.dot(yc, yc))
    if denom == 0:
        return 0.0
    return float(np.clip(np.dot(xc, yc) / denom, -1.0, 1.0))


def evaluate(pred: DepthMap, gt: DepthMap,
             options: EvalOptions = EvalOptions()) -> MetricsReport:
    """Full evaluation: optional least-squares alignment, then Abs-Rel,
    Si-RMS (with masked-in/out variants when a submask is given), Pearson r
    of aligned prediction vs ground truth, and WHDR when pairs are given.

    WHDR is computed on the unaligned prediction (it is invariant under the
    positive-scale part of the alignment anyway).
    """
    m = pred.joint_mask(gt)
    n_valid = int(m.sum())
    if n_valid == 0:
        raise ValidationError("no jointly valid pixels")

    if options.align == "lsq":
        alignment = lsq_align(pred, gt)
        if alignment.scale < 0:
            warnings.warn("least-squares alignment produced a negative scale "
                          "(inverted prediction)", stacklevel=2)
    else:
        alignment = AffineMap(1.0, 0.0)

    aligned = alignment(pred.values)
    g = gt.values
    rel = float(np.mean(np.abs(aligned[m] - g[m]) / g[m]))
    pearson = _pearson(aligned[m], g[m])

    # log residuals need positive aligned depths; the fit may push a few
    # pixels nonpositive, so those are excluded from the si terms only
    pos = m & (aligned > 0)

    def si_over(mask: np.ndarray) -> float:
        n = int(mask.sum())
        if n == 0:
            raise NumericalError("no positive aligned pixels for si-rms")
        z = np.log(aligned[mask]) - np.log(g[mask])
        var = float(np.dot(z, z)) / n - (float(z.sum()) / n) ** 2
        return float(np.sqrt(max(var, 0.0)))

    si = si_over(pos)
    si_masked = None
    if options.submask is not None:
        sub = np.asarray(options.submask, dtype=bool)
        if sub.shape != m.shape:
            raise ValidationError("submask shape must match depth grid")
        si_masked = (si_over(pos & sub), si_over(pos & ~sub))

    whdr_value = None
    if options.pairs is not None:
        whdr_value = whdr(pred, options.pairs, options.whdr_tau)

    return MetricsReport(abs_rel=rel, si_rms=si, alignment=alignment,
                         n_valid=n_valid, pearson_r=pearson,
                         whdr=whdr_value, si_masked=si_masked)


def read_pairs_csv(path, width: int) -> list[tuple[OrdinalPair, float]]:
    """Read ordinal pairs from CSV with header i_x,i_y,j_x,j_y,label,weight.

    Pixel coordinates are converted to flat row-major indices for ``width``
    columns.
    """
    pairs = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != PAIRS_HEADER:
            raise ValidationError(
                f"pairs CSV header must be {','.join(PAIRS_HEADER)}")
        for row in reader:
            i = int(row["i_y"]) * width + int(row["i_x"])
            j = int(row["j_y"]) * width + int(row["j_x"])
            pairs.append((OrdinalPair(i, j, int(row["label"])),
                          float(row["weight"])))
    return pairs


def write_pairs_csv(pairs: Sequence[tuple[OrdinalPair, float]], width: int,
                    path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(PAIRS_HEADER)
        for pair, weight in pairs:
            writer.writerow([pair.i % width, pair.i // width,
                             pair.j % width, pair.j // width,
                             pair.label, weight])
