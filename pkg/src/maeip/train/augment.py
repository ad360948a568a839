"""Paired augmentation: crops, flips, 90-degree rotations and MixUp."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError


@dataclass(frozen=True)
class AugmentConfig:
    hflip: bool = True
    vflip: bool = True
    rot90: bool = True
    mixup: bool = False
    mixup_alpha: float = 1.2
    crop_size: int = 192

    def validate(self) -> AugmentConfig:
        if self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        if self.crop_size < 1:
            raise ConfigError(f"crop_size must be positive, got {self.crop_size}")
        return self


NO_AUGMENT = AugmentConfig(hflip=False, vflip=False, rot90=False, mixup=False)


def geometric(x: np.ndarray, hflip: bool = False, vflip: bool = False, k: int = 0) -> np.ndarray:
    """Flip and rotate the last two axes of ``x``."""
    if hflip:
        x = x[..., ::-1]
    if vflip:
        x = x[..., ::-1, :]
    if k % 4:
        x = np.rot90(x, k, axes=(-2, -1))
    return np.ascontiguousarray(x)


def mixup_pair(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    return lam * a + (1.0 - lam) * b


def random_crop_pair(
    clean: np.ndarray, degraded: np.ndarray, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Same random ``size x size`` window from two ``[C, H, W]`` images."""
    if clean.shape != degraded.shape:
        raise ShapeError(f"paired images differ: {clean.shape} vs {degraded.shape}")
    h, w = clean.shape[-2:]
    if size > h or size > w:
        raise ShapeError(f"crop {size} larger than image {h}x{w}")
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    return clean[..., y : y + size, x : x + size], degraded[..., y : y + size, x : x + size]


def augment_batch(
    clean: np.ndarray, degraded: np.ndarray, config: AugmentConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Augment ``[N, C, H, W]`` pairs.

    Each sample draws its own flips and rotation, applied identically to the
    clean and degraded image (rotations by odd multiples of 90 degrees only for
    square crops). MixUp then blends every pair with a shuffled partner using
    one ``Beta(alpha, alpha)`` weight per pair for both images.
    """
    if clean.shape != degraded.shape:
        raise ShapeError(f"paired batches differ: {clean.shape} vs {degraded.shape}")
    n = clean.shape[0]
    square = clean.shape[-1] == clean.shape[-2]
    out_c, out_d = [], []
    for i in range(n):
        hf = config.hflip and bool(rng.integers(2))
        vf = config.vflip and bool(rng.integers(2))
        k = int(rng.integers(4 if square else 2)) * (1 if square else 2) if config.rot90 else 0
        out_c.append(geometric(clean[i], hf, vf, k))
        out_d.append(geometric(degraded[i], hf, vf, k))
    c, d = np.stack(out_c), np.stack(out_d)
    if config.mixup and n > 1:
        partner = rng.permutation(n)
        lam = rng.beta(config.mixup_alpha, config.mixup_alpha, size=(n, 1, 1, 1)).astype(c.dtype)
        c = mixup_pair(c, c[partner], lam)
        d = mixup_pair(d, d[partner], lam)
    return c, d
