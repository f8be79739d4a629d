"""CACTI encoder simulation: masks, modulation, temporal integration, Bayer path.

Array conventions: a video cube is ``(n_x, n_y, channels, B)``; a mask cube
is ``(n_x, n_y, B)``; a measurement is ``(n_x, n_y)``. ``vec`` flattens in
row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

INIT_EPS = 1e-8


@dataclass
class MaskCube:
    values: np.ndarray  # uint8, (n_x, n_y, B)
    seed: int | None = None

    @property
    def frames(self) -> int:
        return self.values.shape[2]


@dataclass
class Measurement:
    values: np.ndarray  # (n_x, n_y)
    noise_sigma: float = 0.0
    bayer: str | None = None


def _mask_array(m) -> np.ndarray:
    arr = m.values if isinstance(m, MaskCube) else np.asarray(m)
    if arr.ndim != 3:
        raise ShapeError(f"mask cube must be (n_x, n_y, B), got {arr.shape}")
    return arr


def as_cube(x) -> np.ndarray:
    """Promote a ``(n_x, n_y, B)`` grayscale array to ``(n_x, n_y, 1, B)``."""
    x = np.asarray(x)
    if x.ndim == 3:
        return x[:, :, None, :]
    if x.ndim != 4:
        raise ShapeError(f"video cube must be 3-D or 4-D, got {x.shape}")
    return x


def gen_masks(n_x: int, n_y: int, B: int, seed: int, p: float = 0.5) -> MaskCube:
    """I.i.d. Bernoulli(p) binary masks from a seeded PCG64 stream."""
    if min(n_x, n_y, B) < 1:
        raise ValueError("mask extents must be >= 1")
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    values = (rng.random((n_x, n_y, B)) < p).astype(np.uint8)
    return MaskCube(values, seed)


def modulate(x, m) -> np.ndarray:
    x = as_cube(x)
    mask = _mask_array(m)
    if x.shape[:2] != mask.shape[:2] or x.shape[3] != mask.shape[2]:
        raise ShapeError(f"video {x.shape} and masks {mask.shape} disagree")
    return x * mask[:, :, None, :].astype(x.dtype)


def integrate(x_mod, sigma: float = 0.0, seed: int | None = None) -> Measurement:
    """Sum the B modulated frames and add N(0, sigma^2) noise."""
    x_mod = as_cube(x_mod)
    if x_mod.shape[2] != 1:
        raise ShapeError("integrate needs a single-channel cube; mosaic color first")
    frames = x_mod[:, :, 0, :]
    y = frames[:, :, 0].copy()
    for f in range(1, frames.shape[2]):
        y += frames[:, :, f]
    if sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + rng.normal(0.0, sigma, size=y.shape).astype(y.dtype)
    return Measurement(y, float(sigma))


class SensingMatrix:
    """``H = [D_1, ..., D_B]`` with ``D_f = Diag(vec(M_f))``, stored as B diagonals."""

    def __init__(self, diagonals: np.ndarray, spatial: tuple[int, int]):
        self.diagonals = diagonals  # (B, n_x * n_y)
        self.spatial = spatial

    @property
    def shape(self) -> tuple[int, int]:
        n = self.diagonals.shape[1]
        return n, n * self.diagonals.shape[0]

    @property
    def nnz(self) -> int:
        return int(self.diagonals.size)

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(self.diagonals.shape)
        return (self.diagonals * x).sum(axis=0)

    __matmul__ = matvec

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        return (self.diagonals * np.asarray(y).reshape(1, -1)).reshape(-1)

    def to_dense(self) -> np.ndarray:
        return np.hstack([np.diag(d) for d in self.diagonals])


def build_sensing_matrix(m) -> SensingMatrix:
    mask = _mask_array(m)
    diagonals = np.stack([mask[:, :, f].reshape(-1) for f in range(mask.shape[2])])
    return SensingMatrix(diagonals.astype(np.float64), mask.shape[:2])


def vec_video(x) -> np.ndarray:
    """Stack ``[vec(X_1); ...; vec(X_B)]`` for a grayscale cube."""
    x = as_cube(x)
    return np.concatenate([x[:, :, 0, f].reshape(-1) for f in range(x.shape[3])])


def _check_even(shape):
    if shape[0] % 2 or shape[1] % 2:
        raise ShapeError(f"Bayer layout needs even spatial extents, got {shape[:2]}")


def bayer_mosaic(x) -> np.ndarray:
    """RGGB-sample an RGB cube ``(n_x, n_y, 3, B)`` into ``(n_x, n_y, 1, B)``."""
    x = np.asarray(x)
    if x.ndim != 4 or x.shape[2] != 3:
        raise ShapeError(f"bayer_mosaic needs an RGB cube, got {x.shape}")
    _check_even(x.shape)
    out = np.empty(x.shape[:2] + (1, x.shape[3]), dtype=x.dtype)
    out[0::2, 0::2, 0] = x[0::2, 0::2, 0]
    out[0::2, 1::2, 0] = x[0::2, 1::2, 1]
    out[1::2, 0::2, 0] = x[1::2, 0::2, 1]
    out[1::2, 1::2, 0] = x[1::2, 1::2, 2]
    return out


BAYER_OFFSETS = {"r": (0, 0), "g1": (0, 1), "g2": (1, 0), "b": (1, 1)}


def bayer_split(t) -> dict[str, np.ndarray]:
    """Split the leading two axes into the four RGGB quarter-resolution planes."""
    arr = t.values if isinstance(t, (Measurement, MaskCube)) else np.asarray(t)
    _check_even(arr.shape)
    return {k: arr[i::2, j::2].copy() for k, (i, j) in BAYER_OFFSETS.items()}


def bayer_reassemble(parts: dict[str, np.ndarray]) -> np.ndarray:
    r = parts["r"]
    out = np.empty((2 * r.shape[0], 2 * r.shape[1]) + r.shape[2:], dtype=r.dtype)
    for k, (i, j) in BAYER_OFFSETS.items():
        out[i::2, j::2] = parts[k]
    return out


def _backproject(y: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = mask.astype(y.dtype)
    norm = y / (mask.sum(axis=2) + INIT_EPS)
    return mask * norm[:, :, None]


def init_estimate(y, m, color: bool = False) -> np.ndarray:
    """Mask-normalized back-projection ``M_f * y / (sum_f M_f + eps)``.

    Grayscale returns ``(n_x, n_y, 1, B)``. With ``color`` the four RGGB
    sub-measurements are processed independently and stacked as channels,
    giving ``(n_x/2, n_y/2, 4, B)``.
    """
    yv = y.values if isinstance(y, Measurement) else np.asarray(y)
    mask = _mask_array(m)
    if yv.shape != mask.shape[:2]:
        raise ShapeError(f"measurement {yv.shape} and masks {mask.shape} disagree")
    if not np.issubdtype(yv.dtype, np.floating):
        yv = yv.astype(np.float64)
    if not color:
        return _backproject(yv, mask)[:, :, None, :]
    ys, ms = bayer_split(yv), bayer_split(mask)
    return np.stack([_backproject(ys[k], ms[k]) for k in BAYER_OFFSETS], axis=2)


def encode(x, m, sigma: float = 0.0, seed: int | None = None, color: bool = False) -> Measurement:
    """Full encoder: modulate, mosaic (color), integrate."""
    xm = modulate(x, m)
    if color:
        xm = bayer_mosaic(xm)
    meas = integrate(xm, sigma, seed)
    if color:
        meas.bayer = "RGGB"
    return meas
