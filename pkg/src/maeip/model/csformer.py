"""The CSformer network: shallow embedding, five-level encoder-decoder, residual output."""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np

from ..autograd import Tensor, mac_scope, ops
from ..errors import ShapeError
from ..inference.padding import LevelGeometry, PadPlan, build_pad_mask, plan_padding
from .blocks import csformer_block
from .config import BOTTLENECK, NUM_STAGES, AttnKind, ModelConfig
from .params import scope

logger = logging.getLogger(__name__)


@dataclass
class ForwardOutput:
    """Result of one forward pass.

    ``restored`` and ``residual`` are ``None`` when only the encoder ran.
    ``latent`` is the bottleneck feature map at ``1/16`` scale.
    """

    restored: Tensor | None
    residual: Tensor | None
    latent: Tensor
    plan: PadPlan


def shallow_embed(image: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """3x3 same-padding conv to ``C`` channels, no nonlinearity."""
    w = params["embed.weight"]
    if image.ndim != 4 or image.shape[1] != w.shape[1]:
        raise ShapeError(f"embed expects {w.shape[1]} input channels, got image of shape {image.shape}")
    return ops.conv2d(image, w, params["embed.bias"], pad=1)


def downsample(x: Tensor, weight: Tensor) -> Tensor:
    """Pixel-unshuffle by 2 then a 1x1 conv ``4c -> 2c``."""
    return ops.conv2d(ops.pixel_unshuffle(x, 2), weight)


def upsample(x: Tensor, weight: Tensor) -> Tensor:
    """1x1 conv ``c -> 2c`` then pixel-shuffle by 2, giving ``c / 2`` channels."""
    if x.shape[1] % 2:
        raise ShapeError(f"upsample needs an even channel count, got {x.shape[1]}")
    return ops.pixel_shuffle(ops.conv2d(x, weight), 2)


def skip_fuse(dec: Tensor, enc: Tensor, weight: Tensor) -> Tensor:
    """Concatenate decoder then encoder features and reduce ``2c -> c`` with a 1x1 conv."""
    if dec.shape != enc.shape:
        raise ShapeError(f"skip_fuse: decoder {dec.shape} vs encoder {enc.shape}")
    return ops.conv2d(ops.concat([dec, enc], axis=1), weight)


def _mask(x: Tensor, geom: LevelGeometry) -> Tensor:
    return x if geom.fully_valid else ops.mask_mul(x, geom.valid_map())


class _StageRunner:
    """Runs the blocks of each stage with the masks its level needs."""

    def __init__(self, params: Mapping[str, Tensor], config: ModelConfig, plan: PadPlan) -> None:
        self.params = params
        self.config = config
        self.plan = plan
        self._masks: dict[tuple[int, int], np.ndarray | None] = {}

    def pad_mask(self, level: int, shift: int) -> np.ndarray | None:
        key = (level, shift)
        if key not in self._masks:
            geom = self.plan.levels[level]
            needed = not geom.fully_valid or (shift and geom.windowed)
            self._masks[key] = build_pad_mask(self.plan, level, shift) if needed else None
        return self._masks[key]

    def __call__(self, x: Tensor, stage: int) -> Tensor:
        config = self.config
        level = config.stage_level(stage)
        geom = self.plan.levels[level]
        valid = None if geom.fully_valid else geom.valid_map()
        heads = config.heads_per_stage[level]
        for block in range(config.blocks_per_stage[stage]):
            kind = config.block_kind(stage, block)
            shift = config.shift_size if kind is AttnKind.SW else 0
            x = csformer_block(
                x,
                scope(self.params, f"stage{stage}.block{block}."),
                kind,
                heads,
                config.window_size,
                pad_mask=self.pad_mask(level, shift),
                valid=valid,
                compose=config.attn_compose,
                eps=config.ln_eps,
            )
        return x


def model_forward(
    image: Tensor,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    pad_plan: PadPlan | None = None,
    encoder_only: bool = False,
) -> ForwardOutput:
    """Run CSformer on ``[N, in_channels, H, W]`` images.

    Args:
        image: Input batch
        params: Full named parameter set for ``config``
        config: Architecture
        pad_plan: Geometry to use; planned with ``plan_padding`` when omitted
        encoder_only: Stop after the bottleneck

    Returns:
        ForwardOutput. ``residual`` is the output conv result cropped to the
        input size; ``restored`` adds the input to it unless the config is in
        pre-training mode, where the decoder output is returned as is.

    Raises:
        ShapeError: If the image does not match the config or the plan
    """
    if image.ndim != 4 or image.shape[1] != config.in_channels:
        raise ShapeError(f"expected [N, {config.in_channels}, H, W] input, got {image.shape}")
    n, _, h, w = image.shape
    plan = pad_plan if pad_plan is not None else plan_padding(h, w, config)
    if plan.input_hw != (h, w):
        raise ShapeError(f"plan for {plan.input_hw} cannot run a {h}x{w} input")
    levels = plan.levels
    run_stage = _StageRunner(params, config, plan)

    x = ops.fit2d(image, *levels[0].padded_hw)
    with mac_scope("embed"):
        f = _mask(shallow_embed(x, params), levels[0])

    skips: list[Tensor] = []
    for stage in range(BOTTLENECK):
        f = run_stage(f, stage)
        skips.append(f)
        f = ops.fit2d(f, *levels[stage].down_hw)
        with mac_scope("downsample"):
            f = downsample(f, params[f"down{stage}.weight"])
        f = _mask(ops.fit2d(f, *levels[stage + 1].padded_hw), levels[stage + 1])
    latent = run_stage(f, BOTTLENECK)
    logger.debug("latent %s for input %dx%d (%s plan)", latent.shape, h, w, plan.path.name.lower())
    if encoder_only:
        return ForwardOutput(None, None, latent, plan)

    f = latent
    for stage in range(BOTTLENECK + 1, NUM_STAGES):
        level = config.stage_level(stage)
        f = ops.fit2d(f, *levels[level + 1].up_hw)
        with mac_scope("upsample"):
            f = upsample(f, params[f"up{level}.weight"])
        f = _mask(ops.fit2d(f, *levels[level].padded_hw), levels[level])
        with mac_scope("fuse"):
            f = skip_fuse(f, skips[level], params[f"fuse{level}.weight"])
        f = run_stage(f, stage)

    with mac_scope("output"):
        residual = ops.conv2d(f, params["output.weight"], params["output.bias"], pad=1)
    residual = ops.crop2d(residual, *plan.output_hw)
    if config.pretrain_mode:
        return ForwardOutput(residual, residual, latent, plan)
    base = image if config.in_channels == config.out_channels else ops.slice_axis(image, 0, config.out_channels, 1)
    return ForwardOutput(ops.add(base, residual), residual, latent, plan)
