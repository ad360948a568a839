"""Multiply-accumulate accounting, closed form and instrumented.

LayerNorm, GELU, softmax and elementwise ops are not counted.
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from ..autograd import Tensor, counting_macs, no_grad
from ..model.config import BOTTLENECK, NUM_STAGES, AttnMode, ModelConfig
from ..model.csformer import model_forward
from .padding import PadPath, PadPlan, plan_baseline, plan_padding

CONV_CATEGORIES = ("embed", "ca", "gcffn", "downsample", "upsample", "fuse", "output")
ATTN_CATEGORIES = ("qkv", "logits", "values", "proj")
HEAD_PATCH = 16


def conv_macs(cin: int, cout: int, kh: int, kw: int, hout: int, wout: int, groups: int = 1) -> int:
    return cout * (cin // groups) * kh * kw * hout * wout


@dataclass
class MacReport:
    """MAC totals of one forward pass, per category and per network part."""

    path: PadPath
    categories: dict[str, int] = field(default_factory=dict)
    parts: dict[str, int] = field(default_factory=dict)
    baseline: MacReport | None = None

    def add(self, part: str, category: str, macs: int) -> None:
        self.categories[category] = self.categories.get(category, 0) + macs
        self.parts[part] = self.parts.get(part, 0) + macs

    @property
    def total(self) -> int:
        return sum(self.categories.values())

    @property
    def conv(self) -> int:
        return sum(self.categories.get(c, 0) for c in CONV_CATEGORIES)

    @property
    def attn(self) -> int:
        return sum(self.categories.get(c, 0) for c in ATTN_CATEGORIES)

    @property
    def gmacs(self) -> float:
        return self.total / 1e9


def _block_macs(
    report: MacReport, part: str, config: ModelConfig, level: int, hw: tuple[int, int], batch: int
) -> None:
    d, hd = config.width(level), config.hidden(level)
    area = hw[0] * hw[1]
    half = d // 2
    windowed = config.attn_mode_per_level[level] is AttnMode.WINDOWED
    tokens = config.window_size**2 if windowed else area
    report.add(part, "ca", batch * (d * d * area + 2 * half * half + half * d * area))
    report.add(part, "qkv", batch * area * 3 * d * d)
    report.add(part, "logits", batch * area * tokens * d)
    report.add(part, "values", batch * area * tokens * d)
    report.add(part, "proj", batch * area * d * d)
    report.add(part, "gcffn", batch * (2 * (hd * d * area + 9 * hd * area) + d * hd * area))


def count_macs(
    config: ModelConfig,
    plan: PadPlan,
    batch: int = 1,
    include_head: bool = False,
    with_baseline: bool = False,
) -> MacReport:
    """Closed-form MACs of ``model_forward`` under ``plan``.

    Args:
        config: Architecture
        plan: Geometry of the pass
        batch: Images per forward pass
        include_head: Add the pre-training encoder head
        with_baseline: Also count the masked pad-the-input plan at the same
            resolution and attach it as ``baseline``

    Returns:
        MacReport
    """
    report = MacReport(plan.path)
    levels = plan.levels
    c = config.base_channels
    p0 = levels[0].padded_hw
    report.add("embed", "embed", batch * conv_macs(config.in_channels, c, 3, 3, *p0))
    for stage in range(NUM_STAGES):
        level = config.stage_level(stage)
        geom = levels[level]
        if stage > BOTTLENECK:
            src = levels[level + 1]
            report.add(
                f"up{level}",
                "upsample",
                batch * conv_macs(config.width(level + 1), 2 * config.width(level + 1), 1, 1, *src.up_hw),
            )
            report.add(
                f"fuse{level}", "fuse", batch * conv_macs(2 * config.width(level), config.width(level), 1, 1, *geom.padded_hw)
            )
        for _ in range(config.blocks_per_stage[stage]):
            _block_macs(report, f"stage{stage}", config, level, geom.padded_hw, batch)
        if stage < BOTTLENECK:
            dh, dw = geom.down_hw
            report.add(
                f"down{level}",
                "downsample",
                batch * conv_macs(4 * config.width(level), config.width(level + 1), 1, 1, dh // 2, dw // 2),
            )
    report.add("output", "output", batch * conv_macs(c, config.out_channels, 3, 3, *p0))
    if include_head:
        lh, lw = levels[BOTTLENECK].padded_hw
        out = HEAD_PATCH * HEAD_PATCH * config.out_channels
        report.add("head", "head", batch * conv_macs(config.width(BOTTLENECK), out, 1, 1, lh, lw))
    if with_baseline:
        h, w = plan.input_hw
        report.baseline = count_macs(config, plan_baseline(h, w, config), batch, include_head)
    return report


def mac_comparison(config: ModelConfig, h: int, w: int, batch: int = 1) -> dict[PadPath, MacReport]:
    """MACs of the three padding strategies at one resolution."""
    return {
        PadPath.FEATURE: count_macs(config, plan_padding(h, w, config), batch),
        PadPath.BASELINE: count_macs(config, plan_baseline(h, w, config), batch),
        PadPath.UNMASKED: count_macs(config, plan_baseline(h, w, config, masked=False), batch),
    }


def same_geometry(config: ModelConfig, h: int, w: int) -> bool:
    """True when every level of the feature plan is as large as the padded-input one.

    Only then can the two strategies tie on MACs (127x127 pads to 128 at every
    level either way); with any smaller level feature padding is strictly cheaper.
    """
    return plan_padding(h, w, config).stage_dims() == plan_baseline(h, w, config).stage_dims()


def instrumented_macs(
    config: ModelConfig, params: Mapping[str, Tensor], plan: PadPlan, batch: int = 1
) -> MacReport:
    """Run a forward pass on zeros and tally every conv/matmul call it makes."""
    h, w = plan.input_hw
    image = Tensor(np.zeros((batch, config.in_channels, h, w), dtype=np.float32))
    with no_grad(), counting_macs() as counter:
        model_forward(image, params, config, plan)
    report = MacReport(plan.path)
    for category, macs in counter.totals.items():
        report.add(category, category, macs)
    return report
