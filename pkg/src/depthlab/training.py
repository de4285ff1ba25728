"""SGD training loop driven by the curriculum batch sequence, plus the
per-part teacher training that produces difficulty scores.

The optimizer is plain SGD with a stepped learning-rate decay
lr(i) = lr0 * ratio^floor(i / decay_interval). Everything is seeded and
single-threaded, so a (parts, plan, config) triple reproduces bit-identical
parameters.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import curriculum, losses
from .core import CameraIntrinsics, DepthMap
from .errors import NumericalError, ValidationError
from .metrics import lsq_align
from .model import Gradients, ToyPredictor
from .scenes import Sample

LOSS_NAMES = ("mse", "silog", "ranking", "ssi", "vnl", "sn", "combined")

HISTORY_HEADER = ["iter", "lr", "train_loss", "val_abs_rel"]


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 5e-4
    decay_ratio: float = 0.9
    decay_interval: int = 500
    batch_size: int = 6
    iterations: int = 1000
    loss: str = "combined"
    lam: float = 1.0              # weight of the scale/shift term in combined
    augment: bool = False
    crop: Optional[int] = None    # crop side when augmenting; default h // 2
    seed: int = 0
    val_interval: int = 100
    triplet_count: Optional[int] = 64
    ranking_pairs: int = 64

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValidationError("learning rate must be >= 0")
        if not (0 < self.decay_ratio < 1):
            raise ValidationError("decay ratio must be in (0, 1)")
        if self.decay_interval <= 0 or self.batch_size <= 0:
            raise ValidationError("decay interval and batch size must be positive")
        if self.iterations < 0:
            raise ValidationError("iterations must be >= 0")
        if self.loss not in LOSS_NAMES:
            raise ValidationError(f"unknown loss {self.loss!r}")
        if self.val_interval <= 0:
            raise ValidationError("validation interval must be positive")


@dataclass
class HistoryRow:
    iteration: int
    lr: float
    train_loss: float
    val_abs_rel: float


def learning_rate(cfg: TrainConfig, iteration: int) -> float:
    return cfg.lr0 * cfg.decay_ratio ** (iteration // cfg.decay_interval)


def _sample_stream_seed(base_seed: int, sample_id: str) -> int:
    # stable per-sample substream for triplet/pair sampling
    return (base_seed * 1000003 + zlib.crc32(sample_id.encode())) % (2 ** 63)


def _gt_ranking_pairs(sample: Sample, n_pairs: int, seed: int,
                      tau: float = 0.02) -> List[losses.OrdinalPair]:
    """Ordinal pairs labeled from the stored ground truth by ratio test."""
    rng = np.random.default_rng([seed, 0x9A])
    flat = sample.gt_stored.values.ravel()
    valid = np.flatnonzero(sample.gt_stored.mask.ravel())
    pairs = []
    while len(pairs) < n_pairs:
        i, j = (int(x) for x in valid[rng.integers(0, valid.size, size=2)])
        if i == j:
            continue
        if flat[i] / flat[j] > 1 + tau:
            label = 1
        elif flat[j] / flat[i] > 1 + tau:
            label = -1
        else:
            label = 0
        pairs.append(losses.OrdinalPair(i, j, label))
    return pairs


class _LossDispatch:
    """Per-sample loss evaluation with frozen per-sample sampling streams.

    Ordinal pairs and virtual-normal triplets depend only on the stored
    label, so they are sampled once per sample and reused across iterations
    (except under augmentation, where the view geometry changes every time).
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self._pair_cache: Dict[str, List[losses.OrdinalPair]] = {}
        self._triplet_cache: Dict[str, np.ndarray] = {}

    def _triplets(self, sample: Sample, tcfg: losses.TripletConfig):
        if self.cfg.augment:
            return None  # resampled inside the loss for each view
        trip = self._triplet_cache.get(sample.sample_id)
        if trip is None:
            trip = losses.sample_triplets(sample.gt_stored, sample.intrinsics,
                                          tcfg)
            self._triplet_cache[sample.sample_id] = trip
        return trip

    def __call__(self, pred: DepthMap, sample: Sample) -> losses.LossResult:
        cfg = self.cfg
        gt = sample.gt_stored
        k = sample.intrinsics
        if cfg.loss == "mse":
            return losses.mse_loss(pred, gt)
        if cfg.loss == "silog":
            return losses.silog_loss(pred, gt)
        if cfg.loss == "ssi":
            return losses.ssi_loss(pred, gt)
        if cfg.loss == "sn":
            return losses.surface_normal_loss(pred, gt, k)
        if cfg.loss == "ranking":
            # augmented views change shape, so their pairs cannot be cached
            pairs = None if cfg.augment else self._pair_cache.get(sample.sample_id)
            if pairs is None:
                pairs = _gt_ranking_pairs(
                    sample, cfg.ranking_pairs,
                    _sample_stream_seed(cfg.seed, sample.sample_id))
                if not cfg.augment:
                    self._pair_cache[sample.sample_id] = pairs
            return losses.ranking_loss(pred, pairs)
        tcfg = losses.TripletConfig(
            count=cfg.triplet_count,
            seed=_sample_stream_seed(cfg.seed, sample.sample_id))
        triplets = self._triplets(sample, tcfg)
        if cfg.loss == "vnl":
            return losses.virtual_normal_loss(pred, gt, k, tcfg, triplets)
        return losses.combined_loss(pred, gt, k, tcfg, cfg.lam, triplets)


# ---------------------------------------------------------------------------
# augmentation: horizontal flip, nearest-neighbor rescale, joint crop

def _nearest_indices(n_out: int, n_in: int) -> np.ndarray:
    return np.clip(((np.arange(n_out) + 0.5) * n_in / n_out).astype(int),
                   0, n_in - 1)


def augment_sample(sample: Sample, rng: np.random.Generator,
                   crop: int) -> tuple[np.ndarray, DepthMap, CameraIntrinsics]:
    """Random flip, scale in [0.5, 1.5], and fixed-size crop.

    Image and label are re-cropped jointly; rescaling touches spatial
    dimensions only, never the depth values. Intrinsics follow the
    transform so geometric losses stay consistent.
    """
    image = sample.image
    stored = sample.gt_stored.values
    mask = sample.gt_stored.mask
    fx, fy = sample.intrinsics.fx, sample.intrinsics.fy
    cx, cy = sample.intrinsics.cx, sample.intrinsics.cy
    h, w = stored.shape

    if rng.random() < 0.5:
        image = image[:, :, ::-1]
        stored = stored[:, ::-1]
        mask = mask[:, ::-1]
        cx = (w - 1) - cx

    scale = rng.uniform(0.5, 1.5)
    nh = max(crop, int(round(h * scale)))
    nw = max(crop, int(round(w * scale)))
    iv = _nearest_indices(nh, h)
    iu = _nearest_indices(nw, w)
    image = image[:, iv][:, :, iu]
    stored = stored[iv][:, iu]
    mask = mask[iv][:, iu]
    fx, fy = fx * (nw / w), fy * (nh / h)
    cx, cy = cx * (nw / w), cy * (nh / h)

    v0 = int(rng.integers(0, nh - crop + 1))
    u0 = int(rng.integers(0, nw - crop + 1))
    image = image[:, v0:v0 + crop, u0:u0 + crop]
    stored = stored[v0:v0 + crop, u0:u0 + crop]
    mask = mask[v0:v0 + crop, u0:u0 + crop]
    cx, cy = cx - u0, cy - v0

    return (np.ascontiguousarray(image),
            DepthMap(np.ascontiguousarray(stored), np.ascontiguousarray(mask)),
            CameraIntrinsics(fx, fy, cx, cy))


# ---------------------------------------------------------------------------

def validation_abs_rel(model: ToyPredictor, val_samples: Sequence[Sample]) -> float:
    """Mean aligned Abs-Rel against the held-out true depth."""
    if not val_samples:
        raise ValidationError("no validation samples")
    errors = []
    for s in val_samples:
        pred = model.forward(s.image)
        a = lsq_align(pred, s.gt_true)
        m = pred.joint_mask(s.gt_true)
        aligned = a(pred.values[m])
        errors.append(float(np.mean(np.abs(aligned - s.gt_true.values[m])
                                    / s.gt_true.values[m])))
    return float(np.mean(errors))


def _zero_grads(model: ToyPredictor) -> Gradients:
    return Gradients(np.zeros_like(model.w1), np.zeros_like(model.b1),
                     np.zeros_like(model.w2), np.zeros_like(model.b2))


def train(parts: Sequence[Sequence[Sample]], plan: curriculum.CurriculumPlan,
          cfg: TrainConfig, val_samples: Sequence[Sample],
          model: Optional[ToyPredictor] = None,
          ) -> tuple[ToyPredictor, List[HistoryRow]]:
    """Run SGD for cfg.iterations mini-batches drawn by the curriculum plan.

    Records the mean train loss since the previous checkpoint and the
    held-out validation aligned Abs-Rel every cfg.val_interval iterations
    (and at the final iteration). Aborts with a diagnostic if the loss goes
    non-finite.
    """
    if plan.pacing.total_iters != cfg.iterations:
        raise ValidationError("plan total_iters disagrees with the train config")
    if plan.pacing.batch_size != cfg.batch_size:
        raise ValidationError("plan batch size disagrees with the train config")
    by_id: Dict[str, Sample] = {}
    for part in parts:
        for s in part:
            by_id[s.sample_id] = s
    cparts = [curriculum.Part(id=pid, sample_ids=[s.sample_id for s in part])
              for pid, part in enumerate(parts)]

    if model is None:
        model = ToyPredictor.initialized(cfg.seed)
    dispatch = _LossDispatch(cfg)
    aug_rng = np.random.default_rng([cfg.seed, 0xA6])
    crop = cfg.crop
    if cfg.augment and crop is None:
        crop = min(parts[0][0].height, parts[0][0].width) // 2

    history: List[HistoryRow] = []
    window: List[float] = []
    batches = curriculum.batch_sequence(plan, cparts,
                                        seed=cfg.seed * 1000003 + 17)
    for i, batch in enumerate(batches):
        lr = learning_rate(cfg, i)
        total = _zero_grads(model)
        batch_loss = 0.0
        for sid in batch:
            sample = by_id[sid]
            if cfg.augment:
                image, label, k = augment_sample(sample, aug_rng, crop)
                view = Sample(sample_id=sample.sample_id,
                              part_id=sample.part_id, image=image,
                              gt_stored=label, gt_true=sample.gt_true,
                              intrinsics=k,
                              label_affine=sample.label_affine)
            else:
                view = sample
            values, cache = model.forward_raw(view.image)
            if not np.all(np.isfinite(values)) or np.any(values <= 0):
                raise NumericalError(
                    f"training diverged: invalid prediction at iteration {i}")
            pred = DepthMap(values, np.ones(values.shape, dtype=bool))
            result = dispatch(pred, view)
            grads = model.backward(view.image, result.gradient, cache)
            total = Gradients(*(t + g for t, g in zip(total, grads)))
            batch_loss += result.value
        batch_loss /= len(batch)
        if not np.isfinite(batch_loss):
            raise NumericalError(
                f"training diverged: loss {batch_loss} at iteration {i}")
        model.apply_update(
            Gradients(*(g / len(batch) for g in total)), lr)
        window.append(batch_loss)

        if (i + 1) % cfg.val_interval == 0 or i == cfg.iterations - 1:
            val = validation_abs_rel(model, val_samples)
            history.append(HistoryRow(iteration=i, lr=lr,
                                      train_loss=float(np.mean(window)),
                                      val_abs_rel=val))
            window = []
    return model, history


def uniform_plan(parts: Sequence[Sequence[Sample]], cfg: TrainConfig,
                 p: Sequence[float] = None, step_len: int = 1,
                 ) -> curriculum.CurriculumPlan:
    """Plan that exposes every sample from iteration 0 in input order."""
    n = len(parts)
    pacing_cfg = curriculum.PacingConfig(
        p=tuple(p) if p is not None else (1.0,) * n,
        step_len=step_len, batch_size=cfg.batch_size,
        total_iters=cfg.iterations)
    orders = {pid: [s.sample_id for s in part]
              for pid, part in enumerate(parts)}
    return curriculum.CurriculumPlan(orders=orders, pacing=pacing_cfg,
                                     mode="uniform")


def train_teachers(parts: Sequence[Sequence[Sample]], cfg: TrainConfig,
                   ) -> tuple[List[ToyPredictor], curriculum.DifficultyScores]:
    """Train one model per part on that part alone, then score every sample
    of the part by its teacher's aligned Abs-Rel against the stored label."""
    teachers: List[ToyPredictor] = []
    scores: curriculum.DifficultyScores = {}
    for j, part in enumerate(parts):
        tcfg = replace(cfg, seed=cfg.seed * 31 + 1009 * (j + 1),
                       batch_size=max(2, cfg.batch_size // max(1, len(parts))))
        plan = uniform_plan([part], tcfg)
        teacher, _ = train([part], plan, tcfg, val_samples=part[:1])
        teachers.append(teacher)
        preds = [teacher.forward(s.image) for s in part]
        gts = [s.gt_stored for s in part]
        for s, score in zip(part, curriculum.score_samples(preds, gts,
                                                           aligned=True)):
            scores[s.sample_id] = score
    return teachers, scores


def write_history_csv(history: Sequence[HistoryRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_HEADER)
        for row in history:
            writer.writerow([row.iteration, f"{row.lr:.12g}",
                             f"{row.train_loss:.12g}",
                             f"{row.val_abs_rel:.12g}"])


def read_history_csv(path) -> List[HistoryRow]:
    rows = []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != HISTORY_HEADER:
            raise ValidationError(
                f"history CSV header must be {','.join(HISTORY_HEADER)}")
        for row in reader:
            rows.append(HistoryRow(int(row["iter"]), float(row["lr"]),
                                   float(row["train_loss"]),
                                   float(row["val_abs_rel"])))
    return rows
