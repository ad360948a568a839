"""Random patch masking on raw image pixels."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np

from ..autograd import Tensor, ops
from ..errors import ConfigError, ShapeError

FILL_PARAM = "mask.fill"


class FillMode(Enum):
    """Value written into masked patches."""

    ZERO = 0
    LEARNED = 1  # trainable per-channel value


@dataclass(frozen=True)
class MaskConfig:
    patch_size: int = 16
    ratio: float = 0.75
    fill_mode: FillMode = FillMode.ZERO

    def validate(self) -> MaskConfig:
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be positive, got {self.patch_size}")
        # open interval: every training mask keeps some patches visible and hides some
        if not 0.0 < self.ratio < 1.0:
            raise ConfigError(f"mask ratio must lie in (0, 1), got {self.ratio}")
        return self


@dataclass(frozen=True, eq=False)
class MaskSpec:
    """A sampled patch grid; ``grid[i, j]`` is True when patch ``(i, j)`` is hidden."""

    patch_size: int
    ratio: float
    grid: np.ndarray
    seed: int | None = None

    @property
    def total(self) -> int:
        return int(self.grid.size)

    @property
    def masked_count(self) -> int:
        return int(self.grid.sum())

    @property
    def image_hw(self) -> tuple[int, int]:
        return self.grid.shape[0] * self.patch_size, self.grid.shape[1] * self.patch_size

    def pixel_map(self) -> np.ndarray:
        """``[H, W]`` float map with 1 on masked pixels."""
        p = self.patch_size
        return np.kron(self.grid.astype(np.float32), np.ones((p, p), dtype=np.float32))


def masked_patch_count(total: int, ratio: float) -> int:
    """``round(ratio * total)`` with halves rounded up."""
    return int(math.floor(ratio * total + 0.5))


def sample_mask(
    h: int,
    w: int,
    ratio: float = 0.75,
    patch: int = 16,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> MaskSpec:
    """Hide a uniformly random set of exactly ``round(ratio * n)`` patches.

    Raises:
        ShapeError: If ``h`` or ``w`` is not a multiple of ``patch``
    """
    if h % patch or w % patch:
        raise ShapeError(f"{h}x{w} image is not divisible into {patch}x{patch} patches")
    rng = rng if rng is not None else np.random.default_rng(seed)
    gh, gw = h // patch, w // patch
    n = gh * gw
    chosen = rng.choice(n, size=masked_patch_count(n, ratio), replace=False)
    grid = np.zeros(n, dtype=bool)
    grid[chosen] = True
    return MaskSpec(patch, ratio, grid.reshape(gh, gw), seed)


def mask_map(specs: Sequence[MaskSpec]) -> np.ndarray:
    """Stack per-image masks into ``[N, 1, H, W]``."""
    return np.stack([s.pixel_map() for s in specs])[:, None]


def apply_mask(image: Tensor, specs: MaskSpec | Sequence[MaskSpec] | np.ndarray, fill: Tensor | None = None) -> Tensor:
    """Replace masked patches by zeros, or by the per-channel ``fill`` when given.

    Args:
        image: ``[N, C, H, W]``
        specs: One spec for the whole batch, one per image, or a ``[N|1, 1, H, W]`` map
        fill: Optional ``[C]`` tensor (learnable fill)

    Returns:
        Masked image; unmasked pixels are bit-identical to the input

    Raises:
        ShapeError: If the mask does not match the image
    """
    if isinstance(specs, MaskSpec):
        m = specs.pixel_map()[None, None]
    elif isinstance(specs, np.ndarray):
        m = specs
    else:
        m = mask_map(specs)
    n, c, h, w = image.shape
    if m.shape[-2:] != (h, w) or m.shape[0] not in (1, n):
        raise ShapeError(f"mask {m.shape} does not match image {image.shape}")
    m = m.astype(image.dtype, copy=False)
    out = ops.mask_mul(image, 1.0 - m)
    if fill is None:
        return out
    if fill.shape != (c,):
        raise ShapeError(f"fill {fill.shape} does not match {c} channels")
    fill_map = ops.gate_mul(Tensor(np.broadcast_to(m, (n, c, h, w))), ops.reshape(fill, (1, c, 1, 1)))
    return ops.add(out, fill_map)
