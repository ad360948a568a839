"""MAEIP pre-training step and loop."""

from __future__ import annotations

import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from itertools import groupby
from pathlib import Path
from typing import Any

import numpy as np

from ..autograd import Tensor, backward
from ..configfile import build, enum_value
from ..console import make_progress
from ..csvlog import write_csv
from ..errors import ConfigError
from ..model.config import ModelConfig
from ..model.csformer import model_forward
from ..model.params import ModelParams, init_params
from ..train.augment import AugmentConfig, augment_batch, random_crop_pair
from ..train.optim import OptimState, Schedule, adamw_step, collect_grads, cosine_lr
from .head import HEAD_PATCH, encoder_reconstruct, init_head
from .losses import maeip_losses
from .masking import FILL_PARAM, FillMode, MaskConfig, MaskSpec, apply_mask, mask_map, sample_mask
from .stages import PretrainStage, PretrainVariant, variant_schedule

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ("epoch", "loss_enc", "loss_dec")


@dataclass(frozen=True)
class PretrainConfig:
    """Settings of one pre-training run (keys of the ``pretrain`` JSON config)."""

    patch_size: int = 16
    mask_ratio: float = 0.75
    epochs: int = 10
    stage_split: float = 0.5
    lambda_dec: float = 1.0
    fill_mode: FillMode = FillMode.ZERO
    corpus_dir: str | None = None
    seed: int = 0
    variant: PretrainVariant = PretrainVariant.TWO_STAGE
    crop: int = 64
    batch: int = 4
    steps_per_epoch: int | None = None
    lr: float = 2e-4
    lr_min: float = 1e-6
    weight_decay: float = 0.0
    keep_encoder_loss: bool = True

    def validate(self) -> PretrainConfig:
        MaskConfig(self.patch_size, self.mask_ratio, self.fill_mode).validate()
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.stage_split < 1.0:
            raise ConfigError(f"stage_split must lie in [0, 1), got {self.stage_split}")
        if self.crop % HEAD_PATCH or self.crop % self.patch_size:
            raise ConfigError(f"crop {self.crop} must be divisible by {HEAD_PATCH} and the patch size")
        if self.batch < 1 or (self.steps_per_epoch is not None and self.steps_per_epoch < 1):
            raise ConfigError("batch and steps_per_epoch must be positive")
        Schedule(self.lr, self.lr_min, 1).validate()
        return self

    @property
    def mask(self) -> MaskConfig:
        return MaskConfig(self.patch_size, self.mask_ratio, self.fill_mode)

    def schedule(self) -> list[PretrainStage]:
        return variant_schedule(self.variant, self.epochs, self.stage_split)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> PretrainConfig:
        return build(
            cls,
            data,
            {
                "fill_mode": lambda v: enum_value(FillMode, v),
                "variant": lambda v: enum_value(PretrainVariant, v),
            },
        )


@dataclass
class PretrainBatch:
    """Clean crops, their masked versions and the per-pixel mask (1 = hidden)."""

    clean: Tensor
    masked: Tensor
    mask_map: np.ndarray
    specs: list[MaskSpec]


def make_pretrain_batch(clean: np.ndarray, mask: MaskConfig, rng: np.random.Generator) -> PretrainBatch:
    """Sample one mask per image and apply it with a zero fill."""
    n, _, h, w = clean.shape
    specs = [sample_mask(h, w, mask.ratio, mask.patch_size, rng) for _ in range(n)]
    m = mask_map(specs)
    clean_t = Tensor(clean)
    return PretrainBatch(clean_t, apply_mask(clean_t, m), m, specs)


@dataclass
class StepRecord:
    loss_enc: float | None
    loss_dec: float | None
    total: float


@dataclass
class PretrainState:
    """Everything a pre-training step updates."""

    params: ModelParams
    head: dict[str, Tensor]
    opt: OptimState
    fill: Tensor | None = None

    def trainable(self) -> dict[str, Tensor]:
        out = {**self.params, **self.head}
        if self.fill is not None:
            out[FILL_PARAM] = self.fill
        return out


def pretrain_step(
    batch: PretrainBatch,
    state: PretrainState,
    stage: PretrainStage,
    config: ModelConfig,
    lr: float,
    lambda_dec: float = 1.0,
    keep_encoder_loss: bool = True,
) -> tuple[PretrainState, StepRecord]:
    """Forward the masked batch, combine the stage's losses, backward and update.

    The encoder-only stage stops the network at the bottleneck, so no decoder
    parameter receives a gradient or an update.

    Raises:
        ConfigError: If the model is not in pre-training mode
    """
    if not config.pretrain_mode:
        raise ConfigError("pre-training needs a model config with pretrain_mode on")
    masked = batch.masked if state.fill is None else apply_mask(batch.clean, batch.mask_map, state.fill)
    out = model_forward(masked, state.params, config, encoder_only=stage is PretrainStage.ENCODER_ONLY)
    wants_enc = stage is PretrainStage.ENCODER_ONLY or (stage is PretrainStage.JOINT and keep_encoder_loss)
    pred_enc = encoder_reconstruct(out.latent, state.head, batch.clean.shape[-2:]) if wants_enc else None
    losses = maeip_losses(
        pred_enc, out.restored, batch.clean, batch.mask_map, stage, lambda_dec, keep_encoder_loss
    )
    backward(losses.total)

    trainable = state.trainable()
    updated, opt = adamw_step(trainable, collect_grads(trainable), state.opt, lr)
    new_state = PretrainState(
        {k: updated[k] for k in state.params},
        {k: updated[k] for k in state.head},
        opt,
        updated.get(FILL_PARAM),
    )
    record = StepRecord(
        losses.loss_enc.item() if losses.loss_enc is not None else None,
        losses.loss_dec.item() if losses.loss_dec is not None else None,
        losses.total.item(),
    )
    return new_state, record


@dataclass
class EpochLoss:
    epoch: int
    stage: PretrainStage
    loss_enc: float | None
    loss_dec: float | None


@dataclass
class PretrainResult:
    state: PretrainState
    history: list[EpochLoss] = field(default_factory=list)


def sample_crops(
    corpus: Sequence[np.ndarray], indices: Sequence[int], crop: int, rng: np.random.Generator
) -> np.ndarray:
    """Random ``crop x crop`` windows with random flips/rotations, one per index."""
    crops = [random_crop_pair(corpus[i], corpus[i], crop, rng)[0] for i in indices]
    stacked = np.stack(crops).astype(np.float32)
    out, _ = augment_batch(stacked, stacked, AugmentConfig(crop_size=crop), rng)
    return out


def _mean(values: list[float | None]) -> float | None:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def run_pretrain(
    corpus: Sequence[np.ndarray],
    model_config: ModelConfig,
    config: PretrainConfig,
    params: ModelParams | None = None,
    show_progress: bool = True,
) -> PretrainResult:
    """Pre-train on clean ``[C, H, W]`` images following the config's variant schedule.

    Every run of consecutive epochs with the same stage is one training
    segment with its own cosine schedule and fresh optimizer moments; weights
    (and the encoder head) carry over across the boundary unchanged.
    """
    if not corpus:
        raise ConfigError("pre-training corpus is empty")
    if model_config.in_channels != model_config.out_channels:
        raise ConfigError("pre-training reconstructs the input, so in_channels must equal out_channels")
    model_config = model_config.with_updates(pretrain_mode=True)
    rng = np.random.default_rng(config.seed)
    params = params if params is not None else init_params(model_config, config.seed)
    fill = None
    if config.fill_mode is FillMode.LEARNED:
        fill = Tensor(np.zeros(model_config.in_channels, dtype=np.float32), requires_grad=True, name=FILL_PARAM)
    state = PretrainState(params, init_head(model_config, config.seed), OptimState(), fill)
    result = PretrainResult(state)

    stages = config.schedule()
    steps = config.steps_per_epoch or math.ceil(len(corpus) / config.batch)
    logger.info(
        "pre-training %s for %d epochs x %d steps on %d images", config.variant.name.lower(), len(stages), steps, len(corpus)
    )
    epoch = 0
    with make_progress(disable=not show_progress) as progress:
        task = progress.add_task("pretrain", total=len(stages) * steps, status="")
        for stage, group in groupby(stages):
            seg_epochs = len(list(group))
            schedule = Schedule(config.lr, config.lr_min, seg_epochs * steps).validate()
            state.opt = OptimState(weight_decay=config.weight_decay)
            seg_step = 0
            for _ in range(seg_epochs):
                order = rng.permutation(len(corpus))
                records: list[StepRecord] = []
                for b in range(steps):
                    idx = [int(order[(b * config.batch + j) % len(corpus)]) for j in range(config.batch)]
                    batch = make_pretrain_batch(sample_crops(corpus, idx, config.crop, rng), config.mask, rng)
                    lr = cosine_lr(seg_step, schedule)
                    state, record = pretrain_step(
                        batch, state, stage, model_config, lr, config.lambda_dec, config.keep_encoder_loss
                    )
                    records.append(record)
                    seg_step += 1
                    progress.update(task, advance=1, status=f"{stage.name.lower()} loss {record.total:.4f}")
                entry = EpochLoss(
                    epoch, stage, _mean([r.loss_enc for r in records]), _mean([r.loss_dec for r in records])
                )
                result.history.append(entry)
                logger.debug("epoch %d (%s): enc %s dec %s", epoch, stage.name.lower(), entry.loss_enc, entry.loss_dec)
                epoch += 1
    result.state = state
    return result


def write_loss_csv(path: str | Path, history: Sequence[EpochLoss]) -> Path:
    """Loss curve as CSV ``epoch,loss_enc,loss_dec`` (empty cell for a loss the stage skips)."""
    rows = ({"epoch": e.epoch, "loss_enc": e.loss_enc, "loss_dec": e.loss_dec} for e in history)
    return write_csv(path, LOSS_COLUMNS, rows)
