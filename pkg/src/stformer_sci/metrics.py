"""PSNR / SSIM and per-frame video quality reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import ShapeError

K1, K2 = 0.01, 0.03
WIN_SIZE, WIN_SIGMA = 11, 1.5
LUMA = np.array([0.299, 0.587, 0.114])


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``; identical inputs give ``inf``."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak * peak / mse))


def gaussian_window(size: int = WIN_SIZE, sigma: float = WIN_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    # separable correlation, valid region only
    k = len(g)
    rows = sum(g[i] * img[i:img.shape[0] - k + 1 + i, :] for i in range(k))
    return sum(g[j] * rows[:, j:rows.shape[1] - k + 1 + j] for j in range(k))


def _ssim_plane(a, b, peak):
    g = gaussian_window()
    c1, c2 = (K1 * peak) ** 2, (K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    saa = _filter_valid(a * a, g) - mu_a * mu_a
    sbb = _filter_valid(b * b, g) - mu_b * mu_b
    sab = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    return float(np.mean(num / den))


def ssim(a, b, peak: float = 1.0, color: str = "luma") -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), mean over valid positions.

    2-D inputs are one plane. 3-D inputs ``(rows, cols, 3)`` use BT.601 luma
    by default or, with ``color="per-channel"``, the mean over channels.
    """
    a, b = _pair(a, b)
    if a.ndim == 3:
        if color == "luma" and a.shape[2] == 3:
            a, b = a @ LUMA, b @ LUMA
        else:
            return float(np.mean([ssim(a[..., c], b[..., c], peak) for c in range(a.shape[2])]))
    if a.ndim != 2:
        raise ShapeError(f"ssim expects a 2-D plane or (rows, cols, channels), got {a.shape}")
    if min(a.shape) < WIN_SIZE:
        raise ShapeError(f"image {a.shape} smaller than the {WIN_SIZE}x{WIN_SIZE} window")
    return _ssim_plane(a, b, peak)


@dataclass
class QualityReport:
    psnr_db: list
    ssim: list
    mean_psnr_db: float
    mean_ssim: float

    def to_json(self) -> str:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v
        d = asdict(self)
        d["psnr_db"] = [enc(v) for v in d["psnr_db"]]
        d["mean_psnr_db"] = enc(d["mean_psnr_db"])
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text: str) -> QualityReport:
        d = json.loads(text)
        dec = lambda v: math.inf if v == "inf" else float(v)
        return cls([dec(v) for v in d["psnr_db"]], [float(v) for v in d["ssim"]],
                   dec(d["mean_psnr_db"]), float(d["mean_ssim"]))


def eval_dataset(recon, truth, peak: float = 1.0) -> QualityReport:
    """Per-frame PSNR/SSIM over cubes ``(n_x, n_y, C, F)`` (3-D means C=1)."""
    recon, truth = _pair(recon, truth)
    if recon.ndim == 3:
        recon, truth = recon[:, :, None, :], truth[:, :, None, :]
    if recon.ndim != 4:
        raise ShapeError(f"expected a video cube, got {recon.shape}")
    p, s = [], []
    for f in range(recon.shape[3]):
        a, b = recon[:, :, :, f], truth[:, :, :, f]
        if a.shape[2] == 1:
            a, b = a[:, :, 0], b[:, :, 0]
        p.append(psnr(a, b, peak))
        s.append(ssim(a, b, peak))
    return QualityReport(p, s, float(np.mean(p)), float(np.mean(s)))
