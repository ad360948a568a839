"""Whole-image inference under the different padding strategies, and the bench rows."""

from __future__ import annotations

import logging
import time
from collections.abc import Mapping
from dataclasses import asdict, dataclass

import numpy as np

from ..autograd import Tensor, no_grad
from ..model.config import ModelConfig
from ..model.csformer import model_forward
from .macs import count_macs
from .padding import PadPath, PadPlan, plan_baseline, plan_padding

logger = logging.getLogger(__name__)

BENCH_COLUMNS = ("H", "W", "path", "macs_total", "macs_conv", "macs_attn", "wall_ms", "max_abs_diff_vs_baseline")


def plan_for(path: PadPath, h: int, w: int, config: ModelConfig) -> PadPlan:
    if path is PadPath.FEATURE:
        return plan_padding(h, w, config)
    return plan_baseline(h, w, config, masked=path is PadPath.BASELINE)


def _as_batch(image: Tensor | np.ndarray) -> Tensor:
    t = image if isinstance(image, Tensor) else Tensor(image)
    if t.ndim == 3:
        t = Tensor(t.data[None])
    return t


def infer_full_image(
    image: Tensor | np.ndarray,
    params: Mapping[str, Tensor],
    config: ModelConfig,
    path: PadPath = PadPath.FEATURE,
) -> Tensor:
    """Restore images of any size; the output has the input's spatial size.

    Accepts ``[N, C, H, W]`` or a single ``[C, H, W]`` image (returned with a
    batch axis of 1). Runs without recording a tape.
    """
    batch = _as_batch(image)
    h, w = batch.shape[-2:]
    with no_grad():
        out = model_forward(batch, params, config, plan_for(path, h, w, config))
    return out.restored


def infer_padded_input(
    image: Tensor | np.ndarray, params: Mapping[str, Tensor], config: ModelConfig, masked: bool = True
) -> Tensor:
    """The pad-the-input-to-``window * 16`` reference path."""
    return infer_full_image(image, params, config, PadPath.BASELINE if masked else PadPath.UNMASKED)


@dataclass
class BenchRow:
    H: int
    W: int
    path: str
    macs_total: int
    macs_conv: int
    macs_attn: int
    wall_ms: float
    max_abs_diff_vs_baseline: float

    def as_dict(self) -> dict[str, object]:
        return asdict(self)


def bench_resolution(
    params: Mapping[str, Tensor],
    config: ModelConfig,
    h: int,
    w: int,
    rng: np.random.Generator,
    paths: tuple[PadPath, ...] = (PadPath.FEATURE, PadPath.BASELINE, PadPath.UNMASKED),
    batch: int = 1,
) -> list[BenchRow]:
    """Time every padding path on one random input and compare against the masked baseline."""
    image = Tensor(rng.random((batch, config.in_channels, h, w), dtype=np.float32))
    outputs: dict[PadPath, np.ndarray] = {}
    timings: dict[PadPath, float] = {}
    for path in (PadPath.BASELINE,) + tuple(p for p in paths if p is not PadPath.BASELINE):
        start = time.perf_counter()
        outputs[path] = infer_full_image(image, params, config, path).data
        timings[path] = (time.perf_counter() - start) * 1e3

    rows = []
    reference = outputs[PadPath.BASELINE]
    for path in paths:
        report = count_macs(config, plan_for(path, h, w, config), batch)
        diff = float(np.max(np.abs(outputs[path].astype(np.float64) - reference)))
        rows.append(
            BenchRow(h, w, path.name.lower(), report.total, report.conv, report.attn, timings[path], diff)
        )
        logger.debug("bench %dx%d %s: %d MACs, %.1f ms, diff %.2e", h, w, path.name, report.total, timings[path], diff)
    return rows
