"""Multi-part curriculum scheduling: teacher-based difficulty scoring,
per-part difficulty ordering, the staircase pacing function, and the
easy-to-hard mini-batch sequence (with reversed and uniform ablation modes).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Dict, Iterator, List, Sequence

import numpy as np

from .core import DepthMap
from .errors import ValidationError
from .metrics import abs_rel, lsq_align

MODES = ("mcl", "mcl-r", "uniform")

# ceil with a tiny backoff so exact-fraction products (0.2 * 3 * 1000) do not
# round up one extra element due to binary float error
def _ceil_eps(x: float) -> int:
    return math.ceil(x - 1e-9)


@dataclass
class Part:
    """One dataset part: an id and its sample identifiers."""

    id: int
    sample_ids: List[str]

    def __post_init__(self):
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ValidationError(f"part {self.id} has duplicate sample ids")

    @property
    def size(self) -> int:
        return len(self.sample_ids)


DifficultyScores = Dict[str, float]


@dataclass(frozen=True)
class PacingConfig:
    """Per-part starting fractions p_j, the step length in iterations, the
    batch size (split evenly across parts), and the total iteration count."""

    p: tuple
    step_len: int
    batch_size: int
    total_iters: int

    def __post_init__(self):
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        for pj in self.p:
            if not (0 < pj <= 1):
                raise ValidationError("starting fractions must be in (0, 1]")
        if self.step_len <= 0:
            raise ValidationError("step length must be positive")
        if self.batch_size <= 0 or self.batch_size % len(self.p) != 0:
            raise ValidationError(
                "batch size must be positive and divisible by the part count")
        if self.total_iters < 0:
            raise ValidationError("total iterations must be >= 0")


@dataclass
class CurriculumPlan:
    """Difficulty-sorted sample order per part plus pacing parameters."""

    orders: Dict[int, List[str]]
    pacing: PacingConfig
    mode: str

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown curriculum mode {self.mode!r}")
        if len(self.orders) != len(self.pacing.p):
            raise ValidationError("orders and pacing fractions disagree on "
                                  "the number of parts")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "p": list(self.pacing.p),
            "step_len": self.pacing.step_len,
            "batch_size": self.pacing.batch_size,
            "total_iters": self.pacing.total_iters,
            "orders": {str(j): ids for j, ids in sorted(self.orders.items())},
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "CurriculumPlan":
        pacing = PacingConfig(p=tuple(obj["p"]), step_len=int(obj["step_len"]),
                              batch_size=int(obj["batch_size"]),
                              total_iters=int(obj["total_iters"]))
        orders = {int(j): list(ids) for j, ids in obj["orders"].items()}
        return cls(orders=orders, pacing=pacing, mode=obj["mode"])


def score_samples(teacher_predictions: Sequence[DepthMap],
                  gts: Sequence[DepthMap],
                  aligned: bool = True) -> List[float]:
    """Per-sample difficulty as the teacher's Abs-Rel; higher = harder.

    With ``aligned`` the prediction is least-squares scale/shift aligned to
    the label first, matching the affine-invariant evaluation protocol.
    """
    if len(teacher_predictions) != len(gts):
        raise ValidationError("predictions and ground truths must pair up")
    scores = []
    for pred, gt in zip(teacher_predictions, gts):
        if aligned:
            a = lsq_align(pred, gt)
            m = pred.joint_mask(gt)
            aligned_vals = a(pred.values[m])
            score = float(np.mean(np.abs(aligned_vals - gt.values[m])
                                  / gt.values[m]))
        else:
            score = abs_rel(pred, gt)
        scores.append(score)
    return scores


def sort_part(part: Part, scores: DifficultyScores, mode: str) -> List[str]:
    """Stable difficulty order for one part: ascending for mcl, descending
    for mcl-r, unchanged for uniform. Ties keep the original order."""
    if mode not in MODES:
        raise ValidationError(f"unknown curriculum mode {mode!r}")
    if mode == "uniform":
        return list(part.sample_ids)
    missing = [s for s in part.sample_ids if s not in scores]
    if missing:
        raise ValidationError(f"missing difficulty score for {missing[0]!r}")
    values = np.array([scores[s] for s in part.sample_ids], dtype=np.float64)
    key = values if mode == "mcl" else -values
    order = np.argsort(key, kind="stable")
    return [part.sample_ids[i] for i in order]


def pacing(k: int, j: int, cfg: PacingConfig, n_j: int) -> int:
    """Staircase prefix size at step k for part j.

    ceil(min(p_j*(k+1), 1) * N_j): the k+1 offset makes step 0 expose the
    first p_j fraction instead of an empty set, and the ceiling keeps every
    nonempty fraction from truncating to zero.
    """
    if k < 0:
        raise ValidationError("step index must be >= 0")
    frac = min(cfg.p[j] * (k + 1), 1.0)
    return min(_ceil_eps(frac * n_j), n_j)


def build_plan(parts: Sequence[Part], scores: DifficultyScores,
               pacing_cfg: PacingConfig, mode: str) -> CurriculumPlan:
    orders = {part.id: sort_part(part, scores, mode) for part in parts}
    return CurriculumPlan(orders=orders, pacing=pacing_cfg, mode=mode)


def batch_sequence(plan: CurriculumPlan, parts: Sequence[Part],
                   seed: int) -> Iterator[List[str]]:
    """Yield ``total_iters`` mini-batches of sample ids.

    At iteration i (step k = i // step_len) each part contributes
    batch_size / P ids drawn uniformly with replacement from the first
    pacing(k, j) entries of its difficulty order; parts are concatenated in
    part-id order. Fully determined by (plan, parts, seed).
    """
    cfg = plan.pacing
    part_list = sorted(parts, key=lambda p: p.id)
    n_parts = len(part_list)
    if n_parts != len(cfg.p):
        raise ValidationError("parts do not match the pacing configuration")
    per_part = cfg.batch_size // n_parts
    orders = []
    for part in part_list:
        order = plan.orders.get(part.id)
        if order is None or sorted(order) != sorted(part.sample_ids):
            raise ValidationError(
                f"plan order for part {part.id} is not a permutation of it")
        orders.append(order)

    rng = np.random.default_rng(seed)
    for i in range(cfg.total_iters):
        k = i // cfg.step_len
        batch: List[str] = []
        for j, part in enumerate(part_list):
            if plan.mode == "uniform":
                n_eligible = part.size
            else:
                n_eligible = pacing(k, j, cfg, part.size)
            assert n_eligible >= 1, "pacing produced an empty prefix"
            picks = rng.integers(0, n_eligible, size=per_part)
            batch.extend(orders[j][p] for p in picks)
        yield batch


def read_scores_csv(path) -> tuple[DifficultyScores, Dict[str, int]]:
    """Read "sample_id,part_id,score" rows; returns (scores, part of sample)."""
    scores: DifficultyScores = {}
    part_of: Dict[str, int] = {}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != ["sample_id", "part_id", "score"]:
            raise ValidationError(
                "scores CSV header must be sample_id,part_id,score")
        for row in reader:
            sid = row["sample_id"]
            if sid in scores:
                raise ValidationError(f"duplicate sample id {sid!r}")
            scores[sid] = float(row["score"])
            part_of[sid] = int(row["part_id"])
    if not scores:
        raise ValidationError("scores CSV is empty")
    return scores, part_of


def write_scores_csv(scores: DifficultyScores, part_of: Dict[str, int],
                     path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "part_id", "score"])
        for sid in scores:
            writer.writerow([sid, part_of[sid], scores[sid]])
