"""Core grid and geometry types: depth grids, pinhole unprojection,
surface-normal fields, and depth-space affine maps.

Conventions used throughout the package:

* pixel (u, v) means column u, row v; grids are row-major (v, u) arrays
* a depth grid stores positive finite values wherever its mask is true;
  masked-out entries are never read (they are NaN after most operations)
* the 3D point at pixel (u, v) with depth d is
  ((u - cx) * d / fx, (v - cy) * d / fy, d)
* normals are unit length and oriented toward the camera: n . P <= 0
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

# Below this cross-product norm a tangent pair is treated as degenerate.
DEGENERATE_CROSS_NORM = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")

    def rays(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Unit-depth ray directions ((u-cx)/fx, (v-cy)/fy, 1), shape (..., 3)."""
        return np.stack(
            [(us - self.cx) / self.fx, (vs - self.cy) / self.fy, np.ones_like(us, dtype=float)],
            axis=-1,
        )


class Point3(NamedTuple):
    x: float
    y: float
    z: float


@dataclass
class PointCloud:
    """3D points (n, 3); optional per-point uint8 RGB colors (n, 3)."""

    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValidationError("colors must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def point(self, i: int) -> Point3:
        return Point3(*self.points[i])


@dataclass
class DepthMap:
    """Rectangular grid of positive depths with a validity mask.

    ``values`` is float64 (h, w); ``mask`` is bool (h, w). Valid entries are
    finite and strictly positive; invalid entries are never read.
    """

    values: np.ndarray
    mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValidationError("depth values must be a 2-D grid")
        if self.mask is None:
            self.mask = np.isfinite(self.values) & (self.values > 0)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise ValidationError("mask shape must match values shape")
        valid = self.values[self.mask]
        if valid.size and not (np.all(np.isfinite(valid)) and np.all(valid > 0)):
            raise ValidationError("valid depth values must be finite and > 0")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def joint_mask(self, other: "DepthMap") -> np.ndarray:
        if other.values.shape != self.values.shape:
            raise ValidationError(
                f"shape mismatch: {self.values.shape} vs {other.values.shape}"
            )
        return self.mask & other.mask

    def copy(self) -> "DepthMap":
        return DepthMap(self.values.copy(), self.mask.copy())


@dataclass
class NormalField:
    """Per-pixel unit normals (h, w, 3) with a validity mask (h, w)."""

    normals: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.normals = np.asarray(self.normals, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.normals.ndim != 3 or self.normals.shape[2] != 3:
            raise ValidationError("normals must have shape (h, w, 3)")
        if self.mask.shape != self.normals.shape[:2]:
            raise ValidationError("mask shape must match normals grid")

    @property
    def width(self) -> int:
        return self.normals.shape[1]

    @property
    def height(self) -> int:
        return self.normals.shape[0]


@dataclass(frozen=True)
class AffineMap:
    """Depth-space affine transform d -> scale * d + shift."""

    scale: float
    shift: float

    def __post_init__(self):
        if self.scale == 0:
            raise ValidationError("affine scale must be nonzero")

    def __call__(self, d):
        return self.scale * d + self.shift

    def compose(self, first: "AffineMap") -> "AffineMap":
        """self applied after ``first``: (self ∘ first)(d)."""
        return AffineMap(self.scale * first.scale, self.scale * first.shift + self.shift)

    def inverse(self) -> "AffineMap":
        return AffineMap(1.0 / self.scale, -self.shift / self.scale)


def pixel_grid(height: int, width: int):
    """Meshgrid of pixel coordinates: (us, vs) each (h, w) float64."""
    vs, us = np.mgrid[0:height, 0:width]
    return us.astype(np.float64), vs.astype(np.float64)


def unproject(depth: DepthMap, k: CameraIntrinsics,
              colors: Optional[np.ndarray] = None) -> PointCloud:
    """Lift valid pixels to 3D camera-frame points, row-major scan order.

    ``colors`` is an optional (h, w, 3) uint8 image sampled at valid pixels.
    """
    us, vs = pixel_grid(depth.height, depth.width)
    m = depth.mask
    d = depth.values[m]
    pts = np.empty((d.size, 3), dtype=np.float64)
    pts[:, 0] = (us[m] - k.cx) * d / k.fx
    pts[:, 1] = (vs[m] - k.cy) * d / k.fy
    pts[:, 2] = d
    col = None
    if colors is not None:
        colors = np.asarray(colors)
        if colors.shape[:2] != depth.values.shape:
            raise ValidationError("color image shape must match depth grid")
        col = colors[m]
    return PointCloud(pts, col)


def project(points: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection back to pixel coordinates; returns (n, 2) (u, v)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    return np.stack([pts[:, 0] * k.fx / z + k.cx, pts[:, 1] * k.fy / z + k.cy], axis=-1)


def orientation_signs(normals: np.ndarray, points: np.ndarray,
                      tie_eps: float = 1e-12) -> np.ndarray:
    """Signs (+1/-1) flipping unit normals so n . P <= 0 (toward the camera).

    When |n . P| < tie_eps the sign is chosen so the first nonzero component
    of the flipped normal is positive, making the orientation deterministic.
    """
    normals = np.asarray(normals, dtype=np.float64)
    points = np.asarray(points, dtype=np.float64)
    dots = np.sum(normals * points, axis=-1)
    sign = np.where(dots > 0, -1.0, 1.0)
    tie = np.abs(dots) < tie_eps
    if np.any(tie):
        first = normals[..., 0]
        second = normals[..., 1]
        lead = np.where(first != 0, first, np.where(second != 0, second, normals[..., 2]))
        sign = np.where(tie, np.where(lead < 0, -1.0, 1.0), sign)
    return sign


def orient_toward_camera(normals: np.ndarray, points: np.ndarray,
                         tie_eps: float = 1e-12) -> np.ndarray:
    """Flip unit normals so n . P <= 0 (facing the camera at point P)."""
    normals = np.asarray(normals, dtype=np.float64)
    return normals * orientation_signs(normals, points, tie_eps)[..., None]


@dataclass
class NormalInternals:
    """Intermediates of the surface-normal computation, kept for hand-derived
    gradient propagation in the loss layer. All grids are full (h, w, ...)
    with the interior populated; ``ok`` marks pixels with a defined normal."""

    points: np.ndarray   # (h, w, 3) unprojected, NaN where invalid
    rays: np.ndarray     # (h, w, 3) dP/dd per pixel
    tu: np.ndarray       # (h, w, 3) horizontal tangent, zero where undefined
    tv: np.ndarray       # (h, w, 3) vertical tangent
    cross: np.ndarray    # (h, w, 3) tu x tv
    norm: np.ndarray     # (h, w) |cross|
    signs: np.ndarray    # (h, w) orientation signs
    normals: np.ndarray  # (h, w, 3) oriented unit normals, zero where invalid
    ok: np.ndarray       # (h, w) bool


def surface_normal_internals(depth: DepthMap, k: CameraIntrinsics) -> NormalInternals:
    h, w = depth.height, depth.width
    if h < 3 or w < 3:
        raise ValidationError("surface normals need a grid of at least 3x3")

    us, vs = pixel_grid(h, w)
    d = np.where(depth.mask, depth.values, np.nan)
    rays = k.rays(us, vs)
    pts = rays * d[..., None]

    inner = (slice(1, h - 1), slice(1, w - 1))
    neighbors_ok = (
        depth.mask[1:-1, 2:] & depth.mask[1:-1, :-2]
        & depth.mask[2:, 1:-1] & depth.mask[:-2, 1:-1]
        & depth.mask[1:-1, 1:-1]
    )
    tu_i = pts[1:-1, 2:, :] - pts[1:-1, :-2, :]
    tv_i = pts[2:, 1:-1, :] - pts[:-2, 1:-1, :]
    cross_i = np.cross(tu_i, tv_i)
    norm_i = np.linalg.norm(cross_i, axis=-1)
    with np.errstate(invalid="ignore"):
        ok_i = neighbors_ok & (norm_i >= DEGENERATE_CROSS_NORM)

    with np.errstate(invalid="ignore", divide="ignore"):
        unit_i = cross_i / norm_i[..., None]
    unit_i = np.where(ok_i[..., None], unit_i, 0.0)
    signs_i = orientation_signs(unit_i, np.where(ok_i[..., None], pts[inner], 0.0))

    def full(grid_i, fill=0.0, extra=()):
        out = np.full((h, w) + tuple(extra), fill, dtype=np.float64)
        out[inner] = grid_i
        return out

    ok = np.zeros((h, w), dtype=bool)
    ok[inner] = ok_i
    return NormalInternals(
        points=pts,
        rays=rays,
        tu=full(np.where(ok_i[..., None], tu_i, 0.0), extra=(3,)),
        tv=full(np.where(ok_i[..., None], tv_i, 0.0), extra=(3,)),
        cross=full(np.where(ok_i[..., None], cross_i, 0.0), extra=(3,)),
        norm=full(np.where(ok_i, norm_i, 1.0), fill=1.0),
        signs=full(signs_i, fill=1.0),
        normals=full(unit_i * signs_i[..., None], extra=(3,)),
        ok=ok,
    )


def surface_normals(depth: DepthMap, k: CameraIntrinsics) -> NormalField:
    """Central-difference surface normals of the unprojected depth surface.

    At each interior pixel whose 4-neighborhood is fully valid the normal is
    normalize(cross(P(u+1,v) - P(u-1,v), P(u,v+1) - P(u,v-1))), sign-flipped
    toward the camera. Border pixels, pixels with an invalid neighbor, and
    pixels whose tangents are near-parallel are masked out.
    """
    inter = surface_normal_internals(depth, k)
    return NormalField(inter.normals, inter.ok)


def apply_affine(depth: DepthMap, a: AffineMap) -> DepthMap:
    """Apply d -> scale * d + shift on valid pixels; mask is preserved."""
    out = depth.values.copy()
    transformed = a.scale * depth.values[depth.mask] + a.shift
    if transformed.size and np.any(transformed <= 0):
        raise NumericalError("affine maps depth out of positive range")
    out[depth.mask] = transformed
    return DepthMap(out, depth.mask.copy())
