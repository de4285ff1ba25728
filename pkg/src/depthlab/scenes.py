"""Procedural synthetic scenes for the desk-scale training demo.

Each part draws scenes from its own difficulty profile (primitive count and
image noise). A sample stores the true scene depth, a per-sample affinely
distorted label (simulating stereo material with unknown camera scale and
shift), and a 3-channel feature image derived from the distorted label:

* channel 0: the distorted depth, inverted and min-max normalized so nearer
  is brighter (a positive affine label distortion cancels exactly), plus
  per-part observation noise
* channel 1: edge magnitude of channel 0
* channel 2: pure seeded noise

The true depth never enters the image or the training labels; it is held
out for evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from .core import CameraIntrinsics, DepthMap, pixel_grid
from .errors import ValidationError
from .fileio import dump_json, load_json, save_arrays_npz

MIN_SCENE_DEPTH = 0.8
MAX_SCENE_DEPTH = 6.0


@dataclass(frozen=True)
class SceneConfig:
    """Scene distribution for one part; difficulty rises with primitive
    count and noise."""

    width: int = 64
    height: int = 64
    primitives: int = 3
    noise_sigma: float = 0.0
    affine_range: tuple = ((0.25, 4.0), (0.0, 2.0))  # (a interval, b interval)
    seed: int = 0

    def __post_init__(self):
        (a_lo, a_hi), (b_lo, b_hi) = self.affine_range
        if a_lo <= 0 or a_hi < a_lo:
            raise ValidationError("affine scale interval must be positive")
        if b_lo < 0 or b_hi < b_lo:
            raise ValidationError("affine shift interval must be >= 0 "
                                  "(keeps stored depths positive)")
        if self.width < 8 or self.height < 8:
            raise ValidationError("scene grid must be at least 8x8")
        if self.primitives < 0 or self.noise_sigma < 0:
            raise ValidationError("primitives and noise_sigma must be >= 0")

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(fx=float(self.width), fy=float(self.width),
                                cx=(self.width - 1) / 2.0,
                                cy=(self.height - 1) / 2.0)

    def to_json_dict(self) -> dict:
        return {
            "width": self.width, "height": self.height,
            "primitives": self.primitives, "noise_sigma": self.noise_sigma,
            "affine_range": [list(self.affine_range[0]),
                             list(self.affine_range[1])],
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SceneConfig":
        kwargs = dict(obj)
        if "affine_range" in kwargs:
            a, b = kwargs["affine_range"]
            kwargs["affine_range"] = (tuple(a), tuple(b))
        return cls(**kwargs)


@dataclass
class Sample:
    """One training/validation example."""

    sample_id: str
    part_id: int
    image: np.ndarray          # (3, h, w) float64
    gt_stored: DepthMap        # a * gt_true + b, the training label
    gt_true: DepthMap          # held out for evaluation only
    intrinsics: CameraIntrinsics
    label_affine: tuple = (1.0, 0.0)

    @property
    def height(self) -> int:
        return self.image.shape[1]

    @property
    def width(self) -> int:
        return self.image.shape[2]


def _scene_depth(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Base ramp plus spherical bumps, box plateaus, and tilted patches."""
    h, w = cfg.height, cfg.width
    us, vs = pixel_grid(h, w)
    un = (us - (w - 1) / 2.0) / w
    vn = (vs - (h - 1) / 2.0) / h

    depth = (rng.uniform(3.2, 4.5)
             + rng.uniform(-0.8, 0.8) * un
             + rng.uniform(-0.8, 0.8) * vn)

    for _ in range(cfg.primitives):
        kind = rng.integers(0, 3)
        u0 = rng.uniform(0.12, 0.88) * (w - 1)
        v0 = rng.uniform(0.12, 0.88) * (h - 1)
        amp = rng.uniform(0.4, 1.4)
        if kind == 0:   # plane: a global tilt, keeps a 1-plane scene planar
            depth = depth + 0.5 * amp * (rng.uniform(-1.0, 1.0) * un
                                         + rng.uniform(-1.0, 1.0) * vn)
        elif kind == 1:  # spherical cap toward the camera
            r = rng.uniform(0.10, 0.30) * min(h, w)
            q = 1.0 - ((us - u0) ** 2 + (vs - v0) ** 2) / (r * r)
            depth = depth - amp * np.sqrt(np.clip(q, 0.0, None))
        else:            # box plateau
            bw = rng.uniform(0.08, 0.25) * w
            bh = rng.uniform(0.08, 0.25) * h
            inside = (np.abs(us - u0) <= bw) & (np.abs(vs - v0) <= bh)
            depth = depth - amp * inside

    return np.clip(depth, MIN_SCENE_DEPTH, MAX_SCENE_DEPTH)


def _edge_magnitude(channel: np.ndarray) -> np.ndarray:
    gy, gx = np.gradient(channel)
    mag = np.hypot(gx, gy)
    peak = mag.max()
    return mag / peak if peak > 0 else mag


def render_sample(cfg: SceneConfig, rng: np.random.Generator,
                  sample_id: str, part_id: int) -> Sample:
    gt_true = _scene_depth(cfg, rng)
    (a_lo, a_hi), (b_lo, b_hi) = cfg.affine_range
    a = float(rng.uniform(a_lo, a_hi))
    b = float(rng.uniform(b_lo, b_hi))
    stored = a * gt_true + b

    lo, hi = stored.min(), stored.max()
    span = hi - lo if hi > lo else 1.0
    near_is_bright = (hi - stored) / span
    c0 = near_is_bright + cfg.noise_sigma * rng.standard_normal(stored.shape)
    c1 = _edge_magnitude(c0)
    c2 = cfg.noise_sigma * rng.standard_normal(stored.shape)
    image = np.stack([c0, c1, c2])

    return Sample(
        sample_id=sample_id,
        part_id=part_id,
        image=image,
        gt_stored=DepthMap(stored),
        gt_true=DepthMap(gt_true),
        intrinsics=cfg.intrinsics(),
        label_affine=(a, b),
    )


def gen_parts(configs: Sequence[SceneConfig], n_per_part: int,
              split: str = "train") -> List[List[Sample]]:
    """Generate one list of samples per config, deterministic per config
    seed. ``split`` keys an independent substream so validation samples
    never collide with training ones."""
    split_tag = {"train": 0, "val": 1}.get(split)
    if split_tag is None:
        raise ValidationError(f"unknown split {split!r}")
    parts = []
    for part_id, cfg in enumerate(configs):
        rng = np.random.default_rng([cfg.seed, part_id, split_tag])
        samples = [
            render_sample(cfg, rng, f"p{part_id}_{split}{i:04d}", part_id)
            for i in range(n_per_part)
        ]
        parts.append(samples)
    return parts


# ---------------------------------------------------------------------------
# on-disk layout: one npz per sample plus a JSON manifest

def save_dataset(out_dir, configs: Sequence[SceneConfig],
                 train_parts: List[List[Sample]],
                 val_parts: List[List[Sample]]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"parts": []}
    for part_id, cfg in enumerate(configs):
        entry = {"id": part_id, "config": cfg.to_json_dict(),
                 "train": [], "val": []}
        for split, samples in (("train", train_parts[part_id]),
                               ("val", val_parts[part_id])):
            for s in samples:
                fname = f"{s.sample_id}.npz"
                save_arrays_npz(
                    out_dir / fname,
                    image=s.image,
                    gt_stored=np.where(s.gt_stored.mask, s.gt_stored.values,
                                       np.nan),
                    gt_true=np.where(s.gt_true.mask, s.gt_true.values, np.nan),
                    intrinsics=np.array([s.intrinsics.fx, s.intrinsics.fy,
                                         s.intrinsics.cx, s.intrinsics.cy]),
                    label_affine=np.array(s.label_affine),
                )
                entry[split].append({"id": s.sample_id, "file": fname})
        manifest["parts"].append(entry)
    path = out_dir / "manifest.json"
    dump_json(manifest, path)
    return path


def _load_sample(directory: Path, entry: dict, part_id: int) -> Sample:
    with np.load(directory / entry["file"]) as z:
        fx, fy, cx, cy = z["intrinsics"]
        return Sample(
            sample_id=entry["id"],
            part_id=part_id,
            image=z["image"],
            gt_stored=DepthMap(z["gt_stored"]),
            gt_true=DepthMap(z["gt_true"]),
            intrinsics=CameraIntrinsics(float(fx), float(fy), float(cx),
                                        float(cy)),
            label_affine=tuple(z["label_affine"]),
        )


def load_dataset(manifest_path):
    """Load (train_parts, val_parts) from a manifest written by
    save_dataset."""
    manifest_path = Path(manifest_path)
    directory = manifest_path.parent
    manifest = load_json(manifest_path)
    train_parts, val_parts = [], []
    for entry in manifest["parts"]:
        part_id = int(entry["id"])
        train_parts.append([_load_sample(directory, e, part_id)
                            for e in entry["train"]])
        val_parts.append([_load_sample(directory, e, part_id)
                          for e in entry["val"]])
    return train_parts, val_parts
