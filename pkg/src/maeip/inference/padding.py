"""Per-level padding plans, window partitioning and padded-area attention masks.

A plan records, for each depth level, the extent that holds real image
content (``valid_hw``) and the extent the features are padded to
(``padded_hw``). The network re-zeroes features outside the valid extent and
masks padded keys out of attention, so padded positions never reach a valid
output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from ..autograd import Tensor, ops
from ..errors import ShapeError
from ..model.config import NUM_LEVELS, AttnMode, ModelConfig

NEG_INF = -np.inf


class PadPath(Enum):
    """Which padding strategy a plan implements."""

    FEATURE = 0  # pad each level's features to a window multiple
    BASELINE = 1  # pad the input to window * 16, same validity masking
    UNMASKED = 2  # pad the input, treat the padding as image content


def ceil_to(n: int, multiple: int) -> int:
    return -(-n // multiple) * multiple


def _even(hw: tuple[int, int]) -> tuple[int, int]:
    return (ceil_to(hw[0], 2), ceil_to(hw[1], 2))


@dataclass(frozen=True)
class LevelGeometry:
    """Spatial bookkeeping for one depth level.

    ``down_hw`` is the extent handed to pixel-unshuffle when leaving this level
    (always even); ``up_hw`` the extent handed to the upsampling conv when this
    level feeds the next shallower one.
    """

    level: int
    valid_hw: tuple[int, int]
    padded_hw: tuple[int, int]
    down_hw: tuple[int, int]
    up_hw: tuple[int, int]
    windowed: bool

    @property
    def pad_bottom(self) -> int:
        return self.padded_hw[0] - self.valid_hw[0]

    @property
    def pad_right(self) -> int:
        return self.padded_hw[1] - self.valid_hw[1]

    @property
    def fully_valid(self) -> bool:
        return self.valid_hw == self.padded_hw

    def valid_map(self) -> np.ndarray:
        """``[1, 1, h', w']`` map with 1 on the original positions and 0 on padding."""
        return _valid_map(self.valid_hw, self.padded_hw)


@lru_cache(maxsize=128)
def _valid_map(valid_hw: tuple[int, int], padded_hw: tuple[int, int]) -> np.ndarray:
    out = np.zeros((1, 1) + padded_hw, dtype=np.float32)
    out[..., : valid_hw[0], : valid_hw[1]] = 1.0
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PadPlan:
    """Geometry of one inference pass at a given input resolution."""

    input_hw: tuple[int, int]
    output_hw: tuple[int, int]
    levels: tuple[LevelGeometry, ...]
    window_size: int
    path: PadPath

    def stage_dims(self) -> list[tuple[int, int]]:
        """Padded spatial extent per level, shallowest first."""
        return [g.padded_hw for g in self.levels]

    @property
    def shift_size(self) -> int:
        return self.window_size // 2


def _windowed(config: ModelConfig, level: int) -> bool:
    return config.attn_mode_per_level[level] is AttnMode.WINDOWED


def _valid_extents(h: int, w: int) -> list[tuple[int, int]]:
    extents = [(h, w)]
    for _ in range(NUM_LEVELS - 1):
        vh, vw = extents[-1]
        extents.append((math.ceil(vh / 2), math.ceil(vw / 2)))
    return extents


def plan_padding(h: int, w: int, config: ModelConfig) -> PadPlan:
    """Plan feature-level padding for an ``h x w`` input.

    Each level's valid extent is the ceiling half of the previous one; windowed
    levels pad it up to the next multiple of the window size, the global level
    keeps it as is.

    Raises:
        ShapeError: If either dimension is smaller than 1
    """
    if h < 1 or w < 1:
        raise ShapeError(f"cannot plan padding for a {h}x{w} input")
    ws = config.window_size
    levels = []
    for level, valid in enumerate(_valid_extents(h, w)):
        windowed = _windowed(config, level)
        padded = (ceil_to(valid[0], ws), ceil_to(valid[1], ws)) if windowed else valid
        levels.append(LevelGeometry(level, valid, padded, _even(valid), valid, windowed))
    return PadPlan((h, w), (h, w), tuple(levels), ws, PadPath.FEATURE)


def baseline_multiple(config: ModelConfig) -> int:
    return config.window_size * 2 ** (NUM_LEVELS - 1)


def plan_baseline(h: int, w: int, config: ModelConfig, masked: bool = True) -> PadPlan:
    """Plan the pad-the-input strategy (to a multiple of ``window * 16``).

    With ``masked`` the validity maps still mark the original pixels, which
    makes the result numerically equivalent to ``plan_padding``. Without it the
    padded input is processed as if it were image content and only the output
    is cropped.
    """
    if h < 1 or w < 1:
        raise ShapeError(f"cannot plan padding for a {h}x{w} input")
    m = baseline_multiple(config)
    hp, wp = ceil_to(h, m), ceil_to(w, m)
    if not masked:
        full = plan_padding(hp, wp, config)
        return PadPlan((h, w), (h, w), full.levels, full.window_size, PadPath.UNMASKED)
    levels = []
    for level, valid in enumerate(_valid_extents(h, w)):
        padded = (hp // 2**level, wp // 2**level)
        levels.append(LevelGeometry(level, valid, padded, padded, padded, _windowed(config, level)))
    return PadPlan((h, w), (h, w), tuple(levels), config.window_size, PadPath.BASELINE)


# --- windows ---


def window_partition(x: Tensor, window: int) -> Tensor:
    """``[N, d, H', W'] -> [N * nW, d, window, window]``, windows in row-major order per image."""
    n, d, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"window_partition: {h}x{w} is not a multiple of {window}")
    nh, nw = h // window, w // window
    x = ops.reshape(x, (n, d, nh, window, nw, window))
    x = ops.transpose(x, (0, 2, 4, 1, 3, 5))
    return ops.reshape(x, (n * nh * nw, d, window, window))


def window_reverse(windows: Tensor, window: int, h: int, w: int) -> Tensor:
    """Inverse of ``window_partition``."""
    nh, nw = h // window, w // window
    b, d = windows.shape[:2]
    if h % window or w % window or b % (nh * nw):
        raise ShapeError(f"window_reverse: {windows.shape} does not tile {h}x{w}")
    n = b // (nh * nw)
    x = ops.reshape(windows, (n, nh, nw, d, window, window))
    x = ops.transpose(x, (0, 3, 1, 4, 2, 5))
    return ops.reshape(x, (n, d, h, w))


def partition_map(grid: np.ndarray, window: int) -> np.ndarray:
    """Token order of ``window_partition`` applied to a 2-D map: ``[h, w] -> [nW, window**2]``."""
    h, w = grid.shape
    nh, nw = h // window, w // window
    return grid.reshape(nh, window, nw, window).transpose(0, 2, 1, 3).reshape(nh * nw, window * window)


def shift_regions(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Region labels of the cyclic-shift construction, in rolled coordinates."""
    img = np.zeros((h, w), dtype=np.int64)
    if not shift:
        return img
    label = 0
    for hs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
        for vs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
            img[hs, vs] = label
            label += 1
    return img


@lru_cache(maxsize=64)
def build_pad_mask(plan: PadPlan, level: int, shift: int) -> np.ndarray:
    """Additive attention mask (0 keep, -inf exclude) for one level.

    Windowed levels get ``[nW, L, L]``, the global level ``[1, L, L]``. A pair
    is kept when both tokens are valid and, under a shift, fall in the same
    region. Rows of padded queries keep only their diagonal so softmax stays
    defined; those outputs are zeroed afterwards.
    """
    geom = plan.levels[level]
    valid = geom.valid_map()[0, 0] > 0
    if not geom.windowed:
        return global_mask(valid)
    return window_mask(valid, plan.window_size, shift)


def global_mask(valid: np.ndarray) -> np.ndarray:
    """``[1, L, L]`` mask over all tokens of a 2-D validity map."""
    v = valid.reshape(1, -1)
    return _finish(v[:, :, None] & v[:, None, :])


def window_mask(valid: np.ndarray, window: int, shift: int) -> np.ndarray:
    """``[nW, L, L]`` mask for windows over a 2-D validity map, in rolled coordinates when shifted."""
    h, w = valid.shape
    if h % window or w % window:
        raise ShapeError(f"extent {h}x{w} is not a multiple of window {window}")
    if shift:
        valid = np.roll(valid, (-shift, -shift), axis=(0, 1))
    v = partition_map(valid, window)
    labels = partition_map(shift_regions(h, w, window, shift), window)
    return _finish((labels[:, :, None] == labels[:, None, :]) & v[:, :, None] & v[:, None, :])


def _finish(keep: np.ndarray) -> np.ndarray:
    keep = keep | np.eye(keep.shape[-1], dtype=bool)[None]
    mask = np.where(keep, 0.0, NEG_INF).astype(np.float32)
    mask.flags.writeable = False
    return mask
