"""A small convolutional depth regressor with hand-written forward and
backward passes.

Architecture: 3x3 conv (3 -> 8 channels) with bias, ReLU, 3x3 conv (8 -> 1)
with bias, softplus output. Same-size zero padding keeps the output grid
equal to the input grid, and softplus keeps every output strictly positive.
The 5x5 receptive field and ~300 parameters are small enough to verify the
whole chain against finite differences.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import DepthMap
from .errors import ValidationError
from .fileio import dump_json, load_json

IN_CHANNELS = 3
HIDDEN = 8
KSIZE = 3


def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, h, w) -> (h*w, C*9) patch matrix under zero padding.

    Column order is (channel, row offset, col offset), matching the
    flattening of an (out, in, kh, kw) weight tensor.
    """
    c, h, w = x.shape
    xp = np.zeros((c, h + 2, w + 2))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((h * w, c * KSIZE * KSIZE))
    col = 0
    for ci in range(c):
        for di in range(KSIZE):
            for dj in range(KSIZE):
                cols[:, col] = xp[ci, di:di + h, dj:dj + w].ravel()
                col += 1
    return cols


def _col2im(gcols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter patch gradients back onto the input."""
    g = gcols.reshape(h, w, c, KSIZE, KSIZE)
    padded = np.zeros((c, h + 2, w + 2))
    for di in range(KSIZE):
        for dj in range(KSIZE):
            padded[:, di:di + h, dj:dj + w] += g[:, :, :, di, dj].transpose(2, 0, 1)
    return padded[:, 1:-1, 1:-1]


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Gradients(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


class _Cache(NamedTuple):
    cols1: np.ndarray
    z1: np.ndarray
    cols2: np.ndarray
    z2: np.ndarray


@dataclass
class ToyPredictor:
    """Parameters of the two-layer regressor; weight layout (out, in, kh, kw)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def initialized(cls, seed: int) -> "ToyPredictor":
        """Seeded uniform init in [-sqrt(1/fan_in), sqrt(1/fan_in)]."""
        rng = np.random.default_rng([seed, 0xD0])
        bound1 = (IN_CHANNELS * KSIZE * KSIZE) ** -0.5
        bound2 = (HIDDEN * KSIZE * KSIZE) ** -0.5
        return cls(
            w1=rng.uniform(-bound1, bound1, (HIDDEN, IN_CHANNELS, KSIZE, KSIZE)),
            b1=rng.uniform(-bound1, bound1, HIDDEN),
            w2=rng.uniform(-bound2, bound2, (1, HIDDEN, KSIZE, KSIZE)),
            b2=rng.uniform(-bound2, bound2, 1),
        )

    # -- forward ------------------------------------------------------------

    def _forward_cached(self, image: np.ndarray) -> tuple[np.ndarray, _Cache]:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3 or image.shape[0] != IN_CHANNELS:
            raise ValidationError(
                f"image must have shape ({IN_CHANNELS}, h, w)")
        _, h, w = image.shape
        cols1 = _im2col(image)
        z1 = cols1 @ self.w1.reshape(HIDDEN, -1).T + self.b1
        a1 = np.maximum(z1, 0.0)
        cols2 = _im2col(a1.T.reshape(HIDDEN, h, w))
        z2 = cols2 @ self.w2.reshape(1, -1).T + self.b2
        out = _softplus(z2).reshape(h, w)
        return out, _Cache(cols1, z1, cols2, z2)

    def forward_values(self, image: np.ndarray) -> np.ndarray:
        return self._forward_cached(image)[0]

    def forward(self, image: np.ndarray) -> DepthMap:
        """Predicted depth grid (softplus output, everywhere positive)."""
        values = self.forward_values(image)
        return DepthMap(values, np.ones(values.shape, dtype=bool))

    def forward_with_cache(self, image: np.ndarray) -> tuple[DepthMap, _Cache]:
        """Forward pass keeping intermediates for a following backward()."""
        values, cache = self._forward_cached(image)
        return DepthMap(values, np.ones(values.shape, dtype=bool)), cache

    def forward_raw(self, image: np.ndarray) -> tuple[np.ndarray, _Cache]:
        """Forward pass without DepthMap validation; callers that might see
        diverged parameters check the values themselves."""
        return self._forward_cached(image)

    # -- backward -----------------------------------------------------------

    def backward(self, image: np.ndarray, loss_grad: np.ndarray,
                 cache: _Cache = None) -> Gradients:
        """Exact parameter gradient of sum(loss_grad * forward(image)).

        Chains through softplus, the second conv, the rectifier, and the
        first conv; ``loss_grad`` is the (h, w) gradient of the loss with
        respect to the predicted depth grid. Pass the cache from
        forward_with_cache to skip recomputing the forward pass.
        """
        image = np.asarray(image, dtype=np.float64)
        _, h, w = image.shape
        if cache is None:
            _, cache = self._forward_cached(image)
        g_z2 = loss_grad.reshape(-1, 1) * _sigmoid(cache.z2)
        g_w2 = (cache.cols2.T @ g_z2).T.reshape(self.w2.shape)
        g_b2 = g_z2.sum(axis=0)
        g_cols2 = g_z2 @ self.w2.reshape(1, -1)
        g_a1 = _col2im(g_cols2, HIDDEN, h, w)
        g_z1 = g_a1.reshape(HIDDEN, -1).T * (cache.z1 > 0)
        g_w1 = (cache.cols1.T @ g_z1).T.reshape(self.w1.shape)
        g_b1 = g_z1.sum(axis=0)
        return Gradients(g_w1, g_b1, g_w2, g_b2)

    def apply_update(self, grads: Gradients, lr: float) -> None:
        self.w1 -= lr * grads.w1
        self.b1 -= lr * grads.b1
        self.w2 -= lr * grads.w2
        self.b2 -= lr * grads.b2

    # -- flat parameter view (checkpoints, finite differences) ---------------

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1.ravel(),
                               self.w2.ravel(), self.b2.ravel()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ValidationError("flat parameter vector has wrong length")
        shapes = [self.w1.shape, self.b1.shape, self.w2.shape, self.b2.shape]
        pos = 0
        arrays = []
        for shape in shapes:
            n = int(np.prod(shape))
            arrays.append(flat[pos:pos + n].reshape(shape).copy())
            pos += n
        self.w1, self.b1, self.w2, self.b2 = arrays

    @property
    def n_params(self) -> int:
        return self.w1.size + self.b1.size + self.w2.size + self.b2.size

    def copy(self) -> "ToyPredictor":
        return ToyPredictor(self.w1.copy(), self.b1.copy(),
                            self.w2.copy(), self.b2.copy())


def save_checkpoint(model: ToyPredictor, path, seed: int = 0,
                    iteration: int = 0) -> None:
    """Checkpoint JSON: architecture descriptor plus the flat parameter
    vector as base64 little-endian float64."""
    flat = model.flatten().astype("<f8")
    dump_json({
        "architecture": {"in_channels": IN_CHANNELS, "hidden": HIDDEN,
                         "kernel": KSIZE},
        "params": base64.b64encode(flat.tobytes()).decode("ascii"),
        "seed": seed,
        "iteration": iteration,
    }, path)


def load_checkpoint(path) -> tuple[ToyPredictor, dict]:
    obj = load_json(path)
    arch = obj["architecture"]
    if (arch["in_channels"], arch["hidden"], arch["kernel"]) != (
            IN_CHANNELS, HIDDEN, KSIZE):
        raise ValidationError(f"unsupported architecture {arch}")
    flat = np.frombuffer(base64.b64decode(obj["params"]), dtype="<f8")
    model = ToyPredictor.initialized(0)
    model.set_flat(flat)
    meta = {"seed": int(obj["seed"]), "iteration": int(obj["iteration"])}
    return model, meta
