"""Named parameter sets: shapes, closed-form counts and seeded initialisation."""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping

import numpy as np
from scipy.stats import truncnorm

from ..autograd import DEFAULT_DTYPE, Tensor
from .config import BOTTLENECK, NUM_LEVELS, NUM_STAGES, AttnKind, AttnMode, ModelConfig

ModelParams = dict[str, Tensor]

TRUNC_STD = 0.02
ENCODER_PREFIXES = ("embed.",) + tuple(f"stage{s}." for s in range(BOTTLENECK + 1)) + tuple(
    f"down{l}." for l in range(NUM_LEVELS - 1)
)


def _block_shapes(config: ModelConfig, stage: int, block: int) -> dict[str, tuple[int, ...]]:
    level = config.stage_level(stage)
    d, hd, half = config.width(level), config.hidden(level), config.width(level) // 2
    shapes: dict[str, tuple[int, ...]] = {
        "ln1.weight": (d,),
        "ln1.bias": (d,),
        "ca.proj_in.weight": (d, d, 1, 1),
        "ca.proj_in.bias": (d,),
        "ca.mlp1.weight": (half, half, 1, 1),
        "ca.mlp1.bias": (half,),
        "ca.mlp2.weight": (half, half, 1, 1),
        "ca.mlp2.bias": (half,),
        "ca.proj_out.weight": (d, half, 1, 1),
        "ca.proj_out.bias": (d,),
        "msa.qkv.weight": (d, 3 * d),
        "msa.qkv.bias": (3 * d,),
        "msa.proj.weight": (d, d),
        "msa.proj.bias": (d,),
    }
    if config.rel_pos_bias and config.block_kind(stage, block) is not AttnKind.G:
        shapes["msa.rel_bias"] = ((2 * config.window_size - 1) ** 2, config.heads_per_stage[level])
    shapes["ln2.weight"] = (d,)
    shapes["ln2.bias"] = (d,)
    for conv, shape in (
        ("pw1", (hd, d, 1, 1)),
        ("dw1", (hd, 1, 3, 3)),
        ("pw2", (hd, d, 1, 1)),
        ("dw2", (hd, 1, 3, 3)),
        ("pw3", (d, hd, 1, 1)),
    ):
        shapes[f"ffn.{conv}.weight"] = shape
        if config.ffn_bias:
            shapes[f"ffn.{conv}.bias"] = (shape[0],)
    return {f"stage{stage}.block{block}.{k}": v for k, v in shapes.items()}


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name and shape, in initialisation order."""
    c = config.base_channels
    shapes: dict[str, tuple[int, ...]] = {
        "embed.weight": (c, config.in_channels, 3, 3),
        "embed.bias": (c,),
    }
    for stage in range(NUM_STAGES):
        level = config.stage_level(stage)
        if stage > BOTTLENECK:
            deeper = config.width(level + 1)
            shapes[f"up{level}.weight"] = (2 * deeper, deeper, 1, 1)
            shapes[f"fuse{level}.weight"] = (config.width(level), 2 * config.width(level), 1, 1)
        for block in range(config.blocks_per_stage[stage]):
            shapes.update(_block_shapes(config, stage, block))
        if stage < BOTTLENECK:
            shapes[f"down{level}.weight"] = (config.width(level + 1), 4 * config.width(level), 1, 1)
    shapes["output.weight"] = (config.out_channels, c, 3, 3)
    shapes["output.bias"] = (config.out_channels,)
    return shapes


def count_params(config: ModelConfig) -> int:
    """Closed-form parameter count."""
    c, ws = config.base_channels, config.window_size
    total = c * config.in_channels * 9 + c + config.out_channels * c * 9 + config.out_channels
    for stage in range(NUM_STAGES):
        level = config.stage_level(stage)
        d, hd = config.width(level), config.hidden(level)
        block = 4 * d  # two layer norms
        block += d * d + d + 2 * (d * d // 4 + d // 2) + d * d // 2 + d  # channel attention
        block += 4 * d * d + 4 * d  # qkv and output projections
        block += 2 * (hd * d + 9 * hd) + d * hd  # gcffn weights
        if config.ffn_bias:
            block += 4 * hd + d
        n = config.blocks_per_stage[stage]
        total += n * block
        if config.rel_pos_bias and config.attn_mode_per_level[level] is AttnMode.WINDOWED:
            total += n * (2 * ws - 1) ** 2 * config.heads_per_stage[level]
    for level in range(NUM_LEVELS - 1):
        w = config.width(level)
        total += 8 * w * w  # down: 4w -> 2w
        total += 2 * (2 * w) ** 2  # up: 2w -> 4w
        total += 2 * w * w  # fuse: 2w -> w
    return total


def _is_trunc_normal(name: str) -> bool:
    return name.endswith(("msa.qkv.weight", "msa.proj.weight", "msa.rel_bias", "head.weight"))


def init_tensor(
    name: str, shape: tuple[int, ...], rng: np.random.Generator, weight_shape: tuple[int, ...] | None = None
) -> np.ndarray:
    """Initial value for one named parameter.

    Truncated normal (std 0.02, cut at two std) for attention projections and
    the encoder head, fan-in uniform for convs, ones/zeros for layer norms, and
    zeros for linear biases and the output conv. Conv biases need the shape of
    their weight (``weight_shape``) for the fan-in.
    """
    if name.startswith("output."):
        return np.zeros(shape)
    if ".ln" in name:
        return np.ones(shape) if name.endswith(".weight") else np.zeros(shape)
    if _is_trunc_normal(name):
        return truncnorm.rvs(-2.0, 2.0, scale=TRUNC_STD, size=shape, random_state=rng)
    if name.endswith(("msa.qkv.bias", "msa.proj.bias", "head.bias")):
        return np.zeros(shape)
    fan_in = int(np.prod((weight_shape or shape)[1:]))
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: ModelConfig, seed: int = 0, dtype: type = DEFAULT_DTYPE) -> ModelParams:
    """Deterministic parameters for ``config``; the same seed gives bit-identical values."""
    rng = np.random.default_rng(seed)
    shapes = param_shapes(config)
    params: ModelParams = {}
    for name, shape in shapes.items():
        weight_shape = shapes.get(name.removesuffix(".bias") + ".weight") if name.endswith(".bias") else None
        value = init_tensor(name, shape, rng, weight_shape).astype(dtype)
        params[name] = Tensor(value, requires_grad=True, name=name)
    return params


def is_encoder_param(name: str) -> bool:
    return name.startswith(ENCODER_PREFIXES)


def scope(params: Mapping[str, Tensor], prefix: str) -> dict[str, Tensor]:
    """View of the entries under ``prefix`` with the prefix stripped."""
    return {k[len(prefix) :]: v for k, v in params.items() if k.startswith(prefix)}


def cast_params(params: Mapping[str, Tensor], dtype: type) -> ModelParams:
    """Fresh leaf copies in another precision (used by the 64-bit gradient suite)."""
    return {k: Tensor(v.data.astype(dtype), requires_grad=True, name=k) for k, v in params.items()}


def total_size(params: Iterable[Tensor]) -> int:
    return sum(p.size for p in params)
