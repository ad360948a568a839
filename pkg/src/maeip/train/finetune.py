"""Fine-tuning loop: Charbonnier loss, AdamW with cosine annealing, checkpoints."""

from __future__ import annotations

import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..autograd import Tensor, backward
from ..configfile import build
from ..console import make_progress
from ..csvlog import write_csv
from ..data.degrade import Task, degrade_for_task
from ..data.metrics import MetricsRecord, evaluate_pair, psnr
from ..errors import ConfigError
from ..inference.infer import infer_full_image
from ..model.checkpoint import LoadReport, load_checkpoint, load_into, save_checkpoint
from ..model.config import ModelConfig
from ..model.csformer import model_forward
from ..model.params import ModelParams, init_params
from .augment import AugmentConfig, augment_batch, random_crop_pair
from .losses import charbonnier
from .optim import OptimState, Schedule, adamw_step, collect_grads, cosine_lr

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "lr", "loss", "train_psnr")
CHECKPOINT_NAME = "model.cskpt"
LOG_NAME = "train_log.csv"

Pair = tuple[np.ndarray, np.ndarray]  # (clean, degraded), both [C, H, W]


@dataclass(frozen=True)
class FinetuneConfig:
    """Settings of one fine-tuning run (keys of the ``finetune`` JSON config)."""

    task: Task = Task.DENOISE25
    crop: int = 64
    batch: int = 4
    steps: int = 1000
    lr: float = 2e-4
    lr_min: float = 1e-6
    seed: int = 0
    init_checkpoint: str | None = None
    out_dir: str | None = None
    weight_decay: float = 0.0
    augment: bool = True
    mixup: bool = False
    mixup_alpha: float = 1.2
    checkpoint_every: int = 0
    clean_dir: str | None = None
    degraded_dir: str | None = None

    def validate(self) -> FinetuneConfig:
        if self.crop < 1 or self.batch < 1 or self.steps < 1:
            raise ConfigError("crop, batch and steps must be positive")
        if self.checkpoint_every < 0:
            raise ConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.task is Task.PAIRS and not (self.clean_dir and self.degraded_dir):
            raise ConfigError("task 'pairs' needs clean_dir and degraded_dir")
        self.augment_config().validate()
        self.schedule().validate()
        return self

    def augment_config(self) -> AugmentConfig:
        flip = self.augment
        return AugmentConfig(flip, flip, flip, self.mixup, self.mixup_alpha, self.crop)

    def schedule(self) -> Schedule:
        return Schedule(self.lr, self.lr_min, self.steps)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> FinetuneConfig:
        return build(cls, data, {"task": lambda v: v if isinstance(v, Task) else Task.parse(str(v))})


def make_pairs(
    task: Task, clean: Sequence[np.ndarray], seed: int = 0, degraded: Sequence[np.ndarray] | None = None
) -> list[Pair]:
    """Clean/degraded training pairs, synthesised once per image for synthetic tasks."""
    if task is Task.PAIRS:
        if degraded is None or len(degraded) != len(clean):
            raise ConfigError("paired task needs one degraded image per clean image")
        return list(zip(clean, degraded, strict=True))
    rng = np.random.default_rng([seed, 7])
    return [(c, degrade_for_task(task, c, rng)) for c in clean]


@dataclass
class FinetuneBatch:
    clean: np.ndarray
    degraded: np.ndarray


def sample_batch(
    pairs: Sequence[Pair], size: int, augment: AugmentConfig, rng: np.random.Generator
) -> FinetuneBatch:
    """Random crops of random pairs, augmented identically on both sides."""
    idx = rng.integers(0, len(pairs), size=size)
    crops = [random_crop_pair(*pairs[i], augment.crop_size, rng) for i in idx]
    clean = np.stack([c for c, _ in crops]).astype(np.float32)
    degraded = np.stack([d for _, d in crops]).astype(np.float32)
    clean, degraded = augment_batch(clean, degraded, augment, rng)
    return FinetuneBatch(clean, degraded)


@dataclass
class FinetuneState:
    params: ModelParams
    opt: OptimState
    step: int = 0


@dataclass
class FinetuneRecord:
    step: int
    lr: float
    loss: float
    train_psnr: float

    def as_dict(self) -> dict[str, float]:
        return {"step": self.step, "lr": self.lr, "loss": self.loss, "train_psnr": self.train_psnr}


def finetune_step(
    batch: FinetuneBatch, state: FinetuneState, config: ModelConfig, lr: float
) -> tuple[FinetuneState, FinetuneRecord]:
    """One Charbonnier step on a degraded/clean batch.

    ``train_psnr`` is measured on the prediction made before the update.

    Raises:
        ConfigError: If the model is in pre-training mode (no input skip)
    """
    if config.pretrain_mode:
        raise ConfigError("fine-tuning needs the input skip; turn pretrain_mode off")
    out = model_forward(Tensor(batch.degraded), state.params, config)
    loss = charbonnier(out.restored, Tensor(batch.clean))
    backward(loss)
    params, opt = adamw_step(state.params, collect_grads(state.params), state.opt, lr)
    record = FinetuneRecord(state.step, lr, loss.item(), psnr(out.restored.data, batch.clean))
    return FinetuneState(params, opt, state.step + 1), record


def save_state(
    path: str | Path, state: FinetuneState, config: ModelConfig, meta: Mapping[str, Any] | None = None
) -> Path:
    """Checkpoint the parameters, optimizer moments, hyperparameters and step counter."""
    opt = state.opt
    hyper = {"betas": list(opt.betas), "eps": opt.eps, "weight_decay": opt.weight_decay}
    meta = {"step": state.step, "optim": hyper, **(meta or {})}
    return save_checkpoint(path, state.params, config, opt.to_arrays(), meta)


def load_state(
    path: str | Path, config: ModelConfig | None = None, weight_decay: float | None = None
) -> tuple[FinetuneState, ModelConfig]:
    """Restore a state written by :func:`save_state`.

    The model config comes from the checkpoint sidecar when present, and so do
    the AdamW betas, eps and weight decay. ``weight_decay`` only applies to
    checkpoints that did not record one; a different value is logged and ignored.

    Raises:
        ConfigError: If neither the sidecar nor ``config`` gives a model config
    """
    ckpt = load_checkpoint(path)
    model_config = ckpt.config or config
    if model_config is None:
        raise ConfigError(f"{path} has no config sidecar; pass the model config explicitly")
    model_config = model_config.with_updates(pretrain_mode=False)
    params = init_params(model_config)
    load_into(params, ckpt.params, strict=True)
    hyper = ckpt.meta.get("optim") or {}
    stored = hyper.get("weight_decay")
    if stored is not None and weight_decay is not None and weight_decay != stored:
        logger.warning("%s was trained with weight_decay %g; ignoring %g", path, stored, weight_decay)
    opt = OptimState.from_arrays(
        ckpt.optim,
        betas=tuple(hyper.get("betas", (0.9, 0.999))),
        eps=float(hyper.get("eps", 1e-8)),
        weight_decay=float(stored if stored is not None else weight_decay or 0.0),
    )
    step = int(ckpt.meta.get("step", opt.step))
    return FinetuneState(params, opt, step), model_config


def init_from_checkpoint(params: ModelParams, path: str | Path) -> LoadReport:
    """Initialise matching parameters from a (typically pre-trained) checkpoint.

    Entries the model does not have, like the encoder head, are reported as
    unused; model parameters the checkpoint lacks stay at fresh init.
    """
    report = load_into(params, load_checkpoint(path).params)
    logger.info(
        "initialised %d parameters from %s (%d fresh, %d unused)",
        len(report.loaded),
        path,
        len(report.fresh),
        len(report.unused),
    )
    return report


@dataclass
class FinetuneResult:
    state: FinetuneState
    log: list[FinetuneRecord] = field(default_factory=list)
    load_report: LoadReport | None = None
    checkpoint: Path | None = None


def run_finetune(
    pairs: Sequence[Pair],
    model_config: ModelConfig,
    config: FinetuneConfig,
    params: ModelParams | None = None,
    state: FinetuneState | None = None,
    show_progress: bool = True,
) -> FinetuneResult:
    """Train on clean/degraded pairs for ``config.steps`` steps.

    Batches are drawn from a generator seeded by ``(seed, step)``, so a run
    resumed from a saved state continues with the same batches it would have
    seen. With ``out_dir`` set, the log CSV and the final checkpoint are written
    there.
    """
    if not pairs:
        raise ConfigError("no training pairs")
    model_config = model_config.with_updates(pretrain_mode=False)
    report = None
    if state is None:
        params = params if params is not None else init_params(model_config, config.seed)
        if config.init_checkpoint:
            report = init_from_checkpoint(params, config.init_checkpoint)
        state = FinetuneState(params, OptimState(weight_decay=config.weight_decay))
    schedule = config.schedule()
    augment = config.augment_config()
    out_dir = Path(config.out_dir) if config.out_dir else None
    result = FinetuneResult(state, load_report=report)

    logger.info("fine-tuning %s for %d steps on %d pairs", config.task.value, config.steps, len(pairs))
    with make_progress(disable=not show_progress) as progress:
        task = progress.add_task(config.task.value, total=config.steps, completed=state.step, status="")
        while state.step < config.steps:
            rng = np.random.default_rng([config.seed, state.step])
            batch = sample_batch(pairs, config.batch, augment, rng)
            state, record = finetune_step(batch, state, model_config, cosine_lr(state.step, schedule))
            result.log.append(record)
            progress.update(task, advance=1, status=f"loss {record.loss:.4f} psnr {record.train_psnr:.2f}")
            if out_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                save_state(out_dir / CHECKPOINT_NAME, state, model_config, {"task": config.task.value})
    result.state = state
    if out_dir:
        write_csv(out_dir / LOG_NAME, LOG_COLUMNS, (r.as_dict() for r in result.log))
        result.checkpoint = save_state(out_dir / CHECKPOINT_NAME, state, model_config, {"task": config.task.value})
    if result.log:
        logger.info("final loss %.5f, train PSNR %.2f dB", result.log[-1].loss, result.log[-1].train_psnr)
    return result


def evaluate(
    params: Mapping[str, Tensor], config: ModelConfig, pairs: Sequence[Pair], names: Sequence[str] | None = None
) -> list[MetricsRecord]:
    """Restore every degraded image at full size and score it against its clean image."""
    names = names or [f"{i:04d}" for i in range(len(pairs))]
    records = []
    for name, (clean, degraded) in zip(names, pairs, strict=True):
        restored = infer_full_image(degraded, params, config).data[0]
        records.append(evaluate_pair(name, restored, clean))
    return records
