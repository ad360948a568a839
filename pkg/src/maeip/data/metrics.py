"""Restoration quality metrics: PSNR, SSIM and MAE on ``[0, 1]`` images."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from ..errors import ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` over all pixels and channels; ``inf`` for identical inputs."""
    a, b = _pair(a, b)
    err = float(np.mean((a - b) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def mae(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter restricted to windows fully inside the image."""
    r = len(taps) // 2
    out = ndimage.correlate1d(x, taps, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, taps, axis=1, mode="reflect")
    return out[r:-r, r:-r]


def _ssim_channel(a: np.ndarray, b: np.ndarray, peak: float, taps: np.ndarray) -> float:
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, taps), _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a**2
    var_b = _filter_valid(b * b, taps) - mu_b**2
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean structural similarity with an 11x11 Gaussian window (sigma 1.5).

    Accepts ``[H, W]`` or ``[C, H, W]``; channels are scored separately and
    averaged. Only windows lying fully inside the image contribute.

    Raises:
        ShapeError: If the image is smaller than the window
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects [H, W] or [C, H, W], got {a.shape}")
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ShapeError(f"image {a.shape[-2:]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    taps = _gaussian_taps()
    return float(np.mean([_ssim_channel(a[c], b[c], peak, taps) for c in range(a.shape[0])]))


@dataclass
class MetricsRecord:
    name: str
    psnr: float
    ssim: float
    mae: float

    def as_dict(self) -> dict[str, object]:
        return asdict(self)


def evaluate_pair(name: str, restored: np.ndarray, reference: np.ndarray) -> MetricsRecord:
    return MetricsRecord(name, psnr(restored, reference), ssim(restored, reference), mae(restored, reference))


def aggregate(records: Sequence[MetricsRecord], name: str = "mean") -> MetricsRecord:
    """Arithmetic mean of every metric (PSNR is ``inf`` if any pair was identical)."""
    if not records:
        raise ValueError("Invalid aggregate: no records")
    return MetricsRecord(
        name,
        float(np.mean([r.psnr for r in records])),
        float(np.mean([r.ssim for r in records])),
        float(np.mean([r.mae for r in records])),
    )
