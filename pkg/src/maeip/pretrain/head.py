"""Encoder head: project bottleneck tokens back to raw pixel patches."""

from __future__ import annotations

from collections.abc import Mapping

import numpy as np

from ..autograd import DEFAULT_DTYPE, Tensor, mac_scope, ops
from ..errors import ShapeError
from ..model.config import BOTTLENECK, ModelConfig
from ..model.params import init_tensor

HEAD_PATCH = 2**BOTTLENECK


def head_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    out = HEAD_PATCH * HEAD_PATCH * config.out_channels
    return {"head.weight": (out, config.width(BOTTLENECK), 1, 1), "head.bias": (out,)}


def init_head(config: ModelConfig, seed: int = 0, dtype: type = DEFAULT_DTYPE) -> dict[str, Tensor]:
    """Truncated-normal weights, zero bias; seeded independently of the network."""
    rng = np.random.default_rng([seed, 1])
    return {
        name: Tensor(init_tensor(name, shape, rng).astype(dtype), requires_grad=True, name=name)
        for name, shape in head_shapes(config).items()
    }


def encoder_reconstruct(
    latent: Tensor, head: Mapping[str, Tensor], out_hw: tuple[int, int] | None = None
) -> Tensor:
    """Per-token linear map ``16C -> 16*16*channels``, then pixel-shuffle to image resolution.

    Each bottleneck token fills exactly one 16x16 pixel patch.

    Raises:
        ShapeError: If the latent width does not match the head
    """
    w = head["head.weight"]
    if latent.ndim != 4 or latent.shape[1] != w.shape[1]:
        raise ShapeError(f"head expects {w.shape[1]} latent channels, got {latent.shape}")
    with mac_scope("head"):
        tokens = ops.conv2d(latent, w, head["head.bias"])
    pixels = ops.pixel_shuffle(tokens, HEAD_PATCH)
    if out_hw is not None:
        pixels = ops.crop2d(pixels, *out_hw)
    return pixels
