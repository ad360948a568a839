"""Synthetic degradations (Gaussian noise, rain streaks) and a procedural clean corpus."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..errors import ConfigError

NOISE_LEVELS = (15, 25, 50)


class Task(Enum):
    """Restoration tasks the fine-tuning harness knows how to synthesise."""

    DENOISE15 = "denoise15"
    DENOISE25 = "denoise25"
    DENOISE50 = "denoise50"
    DENOISE_BLIND = "denoise-blind"
    DERAIN = "derain"
    PAIRS = "pairs"

    @classmethod
    def parse(cls, name: str) -> Task:
        try:
            return cls(name)
        except ValueError:
            raise ConfigError(f"unknown task {name!r}; choose from {[t.value for t in cls]}") from None


def degrade_awgn(clean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. Gaussian noise with std ``sigma / 255``; the result is not clipped."""
    if sigma == 0:
        return clean.copy()
    noise = rng.standard_normal(clean.shape) * (sigma / 255.0)
    return (clean + noise).astype(clean.dtype, copy=False)


@dataclass(frozen=True)
class RainParams:
    count: int = 24
    length: int = 12
    angle: float = 75.0  # degrees from the horizontal axis
    angle_jitter: float = 6.0
    intensity: float = 0.6


def rasterize_streak(h: int, w: int, x0: float, y0: float, length: float, angle_deg: float) -> np.ndarray:
    """Boolean ``[h, w]`` map of a straight segment sampled once per major-axis pixel."""
    theta = math.radians(angle_deg)
    dx, dy = length * math.cos(theta), length * math.sin(theta)
    steps = int(round(max(abs(dx), abs(dy)))) + 1
    t = np.linspace(0.0, 1.0, steps)
    xs = np.rint(x0 + t * dx).astype(np.int64)
    ys = np.rint(y0 + t * dy).astype(np.int64)
    inside = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
    out = np.zeros((h, w), dtype=bool)
    out[ys[inside], xs[inside]] = True
    return out


def rain_layer(h: int, w: int, params: RainParams, rng: np.random.Generator) -> np.ndarray:
    """``[h, w]`` streak intensity map, deterministic for a seeded ``rng``."""
    layer = np.zeros((h, w), dtype=np.float32)
    for _ in range(params.count):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        angle = params.angle + rng.uniform(-params.angle_jitter, params.angle_jitter)
        layer[rasterize_streak(h, w, x0, y0, params.length, angle)] = params.intensity
    return layer


def degrade_rain(clean: np.ndarray, params: RainParams, rng: np.random.Generator) -> np.ndarray:
    """Add bright oriented streaks to every channel of ``[C, H, W]``; not clipped."""
    if params.count == 0:
        return clean.copy()
    return (clean + rain_layer(*clean.shape[-2:], params, rng)).astype(clean.dtype, copy=False)


def degrade_for_task(task: Task, clean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Degraded counterpart of one clean image for a synthetic task."""
    match task:
        case Task.DENOISE15 | Task.DENOISE25 | Task.DENOISE50:
            return degrade_awgn(clean, int(task.value.removeprefix("denoise")), rng)
        case Task.DENOISE_BLIND:
            return degrade_awgn(clean, float(rng.choice(NOISE_LEVELS)), rng)
        case Task.DERAIN:
            return degrade_rain(clean, RainParams(), rng)
    raise ConfigError(f"task {task.value!r} uses paired directories, not a synthetic degradation")


def synth_image(h: int, w: int, rng: np.random.Generator, channels: int = 3) -> np.ndarray:
    """Procedural clean image: smooth gradient, rectangles, discs and a sinusoidal texture."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    yy /= max(h - 1, 1)
    xx /= max(w - 1, 1)
    img = np.empty((channels, h, w), dtype=np.float32)
    for c in range(channels):
        a, b, base = rng.uniform(-0.4, 0.4, size=3)
        img[c] = 0.5 + base * 0.5 + a * xx + b * yy
    for _ in range(int(rng.integers(2, 6))):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        rh, rw = rng.integers(h // 8 + 1, h // 2 + 2), rng.integers(w // 8 + 1, w // 2 + 2)
        img[:, y0 : y0 + rh, x0 : x0 + rw] = rng.uniform(0, 1, size=(channels, 1, 1))
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        r = rng.uniform(min(h, w) / 10, min(h, w) / 3)
        disc = (yy * (h - 1) - cy) ** 2 + (xx * (w - 1) - cx) ** 2 <= r * r
        img[:, disc] = rng.uniform(0, 1, size=(channels, 1))
    freq, phase, amp = rng.uniform(2, 12), rng.uniform(0, 2 * np.pi), rng.uniform(0.02, 0.1)
    direction = rng.uniform(0, np.pi)
    wave = np.sin(2 * np.pi * freq * (xx * np.cos(direction) + yy * np.sin(direction)) + phase)
    img += amp * wave[None].astype(np.float32)
    return np.clip(img, 0.0, 1.0)


def synth_corpus(n: int, h: int, w: int, seed: int = 0, channels: int = 3) -> list[np.ndarray]:
    """``n`` procedural images; the same seed gives the same corpus."""
    rng = np.random.default_rng(seed)
    return [synth_image(h, w, rng, channels) for _ in range(n)]
