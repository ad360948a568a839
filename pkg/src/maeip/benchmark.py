"""Desk-scale experiments: overfitting, pre-training benefit, schedules and padding.

Run with ``python -m maeip.benchmark <experiment>``; every experiment prints a
results table and returns its numbers so tests can assert on them.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .console import console, pass_fail, results_table, setup_logging
from .csvlog import write_csv
from .data.degrade import Task, synth_corpus
from .gradsuite import TOLERANCE, run_gradient_suite
from .inference.infer import bench_resolution
from .inference.macs import mac_comparison, same_geometry
from .inference.padding import PadPath, plan_padding
from .model.config import ModelConfig, get_preset
from .model.params import ModelParams, init_params
from .pretrain.pretrain import PretrainConfig, run_pretrain
from .pretrain.stages import PretrainVariant
from .train.finetune import FinetuneConfig, evaluate, make_pairs, run_finetune

logger = logging.getLogger(__name__)

# Pass thresholds of the acceptance runs
OVERFIT_MIN_PSNR = 35.0
TWO_STAGE_MAX_GAP_DB = 0.3
EQUIVALENCE_TOL = 1e-5
GRADIENT_SUITE_BUDGET_S = 300.0
OVERFIT_BUDGET_S = 1800.0
CALIBRATION_CSV = Path("runs") / "calibration.csv"
CALIBRATION_COLUMNS = ("check", "preset", "value", "threshold", "seconds", "budget_s", "passed")


@dataclass(frozen=True)
class Scale:
    """Sizes of one experiment run; ``QUICK`` is for smoke runs."""

    pretrain_images: int = 200
    image_size: int = 64
    pretrain_epochs: int = 4
    steps_per_epoch: int = 25
    finetune_steps: int = 300
    train_images: int = 16
    heldout_images: int = 8
    seeds: tuple[int, ...] = (0, 1, 2)
    batch: int = 4


FULL = Scale()
QUICK = Scale(
    pretrain_images=16,
    pretrain_epochs=2,
    steps_per_epoch=3,
    finetune_steps=6,
    train_images=4,
    heldout_images=2,
    seeds=(0,),
    batch=2,
)


# =============================================================================
# SHARED PIECES
# =============================================================================


def _task_data(task: Task, scale: Scale, seed: int) -> tuple[list, list]:
    side = scale.image_size
    train = synth_corpus(scale.train_images, side, side, seed=1000 + seed)
    heldout = synth_corpus(scale.heldout_images, side, side, seed=2000 + seed)
    return make_pairs(task, train, seed), make_pairs(task, heldout, seed + 500)


def pretrained(config: ModelConfig, variant: PretrainVariant, scale: Scale, seed: int, epochs: int | None = None) -> ModelParams | None:
    """Pre-trained weights for one variant (``None`` for no pre-training)."""
    epochs = scale.pretrain_epochs if epochs is None else epochs
    if variant is PretrainVariant.NONE or epochs == 0:
        return None
    corpus = synth_corpus(scale.pretrain_images, scale.image_size, scale.image_size, seed=seed)
    pt = PretrainConfig(
        epochs=epochs,
        variant=variant,
        seed=seed,
        crop=scale.image_size,
        batch=scale.batch,
        steps_per_epoch=scale.steps_per_epoch,
    )
    return run_pretrain(corpus, config, pt, show_progress=False).state.params


def finetune_score(
    config: ModelConfig, task: Task, scale: Scale, seed: int, init: ModelParams | None = None
) -> float:
    """Fine-tune from ``init`` (or scratch) and return the mean held-out PSNR."""
    train, heldout = _task_data(task, scale, seed)
    ft = FinetuneConfig(
        task=task, crop=scale.image_size, batch=scale.batch, steps=scale.finetune_steps, seed=seed
    )
    params = None
    if init is not None:
        params = {k: v.detach() for k, v in init.items()}
        for p in params.values():
            p.requires_grad = True
    result = run_finetune(train, config, ft, params=params, show_progress=False)
    return float(np.mean([r.psnr for r in evaluate(result.state.params, config, heldout)]))


def _mean_scores(config: ModelConfig, variant: PretrainVariant, task: Task, scale: Scale, epochs: int | None = None) -> list[float]:
    return [finetune_score(config, task, scale, s, pretrained(config, variant, scale, s, epochs)) for s in scale.seeds]


# =============================================================================
# EXPERIMENTS
# =============================================================================


@dataclass
class OverfitResult:
    final_psnr: float
    steps: int
    seconds: float

    @property
    def passed(self) -> bool:
        return self.final_psnr >= OVERFIT_MIN_PSNR and self.seconds <= OVERFIT_BUDGET_S


def overfit(preset: str = "csformer-toy", steps: int = 2000, images: int = 8, seed: int = 0, lr: float = 1e-3) -> OverfitResult:
    """Train on a handful of noisy 64x64 crops and report the final train PSNR."""
    config = get_preset(preset)
    pairs = make_pairs(Task.DENOISE25, synth_corpus(images, 64, 64, seed=seed), seed)
    ft = FinetuneConfig(task=Task.DENOISE25, crop=64, batch=images, steps=steps, lr=lr, seed=seed)
    start = time.perf_counter()
    log = run_finetune(pairs, config, ft).log
    seconds = time.perf_counter() - start
    final = float(np.mean([r.train_psnr for r in log[-10:]]))
    result = OverfitResult(final, steps, seconds)
    table = results_table(f"overfit ({preset}, sigma 25)", ["steps", "train PSNR (dB)", "seconds", "result"])
    table.add_row(str(steps), f"{final:.2f}", f"{seconds:.0f}", pass_fail(result.passed))
    console.print(table)
    return result


def variants(
    scale: Scale = FULL,
    preset: str = "csformer-nano",
    task: Task = Task.DERAIN,
    which: Sequence[PretrainVariant] = tuple(PretrainVariant),
) -> dict[PretrainVariant, float]:
    """Mean held-out PSNR after fine-tuning from each pre-training variant."""
    config = get_preset(preset)
    scores = {v: float(np.mean(_mean_scores(config, v, task, scale))) for v in which}
    table = results_table(f"pre-training variants ({task.value})", ["variant", "held-out PSNR (dB)"])
    for v, psnr_db in scores.items():
        table.add_row(v.name.lower(), f"{psnr_db:.2f}")
    console.print(table)
    return scores


def maeip_benefit(scale: Scale = FULL, preset: str = "csformer-nano") -> tuple[float, float]:
    """(from scratch, with pre-training) mean held-out PSNR on the deraining task."""
    scores = variants(scale, preset, which=(PretrainVariant.NONE, PretrainVariant.TWO_STAGE))
    scratch, pre = scores[PretrainVariant.NONE], scores[PretrainVariant.TWO_STAGE]
    console.print(f"pre-training gain {pre - scratch:+.3f} dB {pass_fail(pre >= scratch)}")
    return scratch, pre


def two_stage(scale: Scale = FULL, preset: str = "csformer-nano") -> tuple[float, float]:
    """(one-stage, two-stage) mean held-out PSNR; the gap should stay small."""
    scores = variants(scale, preset, which=(PretrainVariant.MAEIP, PretrainVariant.TWO_STAGE))
    one, two = scores[PretrainVariant.MAEIP], scores[PretrainVariant.TWO_STAGE]
    console.print(f"two-stage gap {two - one:+.3f} dB {pass_fail(abs(two - one) <= TWO_STAGE_MAX_GAP_DB)}")
    return one, two


def pretrain_length(
    scale: Scale = FULL, preset: str = "csformer-nano", epochs: Sequence[int] = (0, 2, 4, 8)
) -> dict[int, float]:
    """Held-out PSNR as a function of the number of pre-training epochs."""
    config = get_preset(preset)
    scores = {
        k: float(np.mean(_mean_scores(config, PretrainVariant.TWO_STAGE, Task.DERAIN, scale, k))) for k in epochs
    }
    values = list(scores.values())
    monotone = all(b >= a for a, b in zip(values, values[1:]))
    table = results_table("pre-training length", ["epochs", "held-out PSNR (dB)"])
    for k, psnr_db in scores.items():
        table.add_row(str(k), f"{psnr_db:.2f}")
    console.print(table)
    console.print(f"non-decreasing {pass_fail(monotone)}")
    return scores


@dataclass
class EquivalenceRow:
    h: int
    w: int
    max_abs_diff: float
    macs_feature: int
    macs_baseline: int
    stage_dims: list[tuple[int, int]]
    same_geometry: bool = False

    @property
    def passed(self) -> bool:
        cheaper = self.macs_feature < self.macs_baseline or (self.same_geometry and self.macs_feature == self.macs_baseline)
        return self.max_abs_diff <= EQUIVALENCE_TOL and cheaper


def equivalence(
    sizes: Sequence[tuple[int, int]] = ((16, 16), (17, 23), (100, 100), (128, 128)),
    preset: str = "csformer-nano",
    seed: int = 0,
) -> list[EquivalenceRow]:
    """Feature padding against the padded-input baseline at several resolutions."""
    config = get_preset(preset)
    params = init_params(config, seed)
    # A zero output conv would make both paths return the input.
    rng = np.random.default_rng(seed)
    params["output.weight"].data = (0.05 * rng.standard_normal(params["output.weight"].shape)).astype(np.float32)
    rows = []
    for h, w in sizes:
        bench = bench_resolution(params, config, h, w, rng, (PadPath.FEATURE, PadPath.BASELINE))
        macs = mac_comparison(config, h, w)
        rows.append(
            EquivalenceRow(
                h,
                w,
                bench[0].max_abs_diff_vs_baseline,
                macs[PadPath.FEATURE].total,
                macs[PadPath.BASELINE].total,
                plan_padding(h, w, config).stage_dims(),
                same_geometry(config, h, w),
            )
        )
    table = results_table("padded inference equivalence", ["size", "max |diff|", "MACs feature", "MACs baseline", "stage dims", "result"])
    for r in rows:
        dims = " ".join(f"{a}x{b}" for a, b in r.stage_dims)
        table.add_row(
            f"{r.h}x{r.w}", f"{r.max_abs_diff:.2e}", f"{r.macs_feature:,}", f"{r.macs_baseline:,}", dims, pass_fail(r.passed)
        )
    console.print(table)
    return rows


def calibrate(
    out: str | Path = CALIBRATION_CSV,
    suite_preset: str = "csformer-nano",
    overfit_preset: str = "csformer-toy",
    suite_inputs: int = 5,
    overfit_steps: int = 2000,
    overfit_images: int = 8,
) -> list[dict[str, object]]:
    """Time the gradient suite and the overfit run and record both to ``out``.

    Each row holds the measured value next to its threshold and the wall time
    next to its budget.
    """
    start = time.perf_counter()
    suite = run_gradient_suite(suite_preset, inputs=suite_inputs)
    suite_s = time.perf_counter() - start
    worst = max(r.max_rel_err for r in suite)
    fit = overfit(overfit_preset, steps=overfit_steps, images=overfit_images)
    rows: list[dict[str, object]] = [
        {
            "check": "gradient_suite",
            "preset": suite_preset,
            "value": worst,
            "threshold": TOLERANCE,
            "seconds": suite_s,
            "budget_s": GRADIENT_SUITE_BUDGET_S,
            "passed": all(r.passed for r in suite) and suite_s <= GRADIENT_SUITE_BUDGET_S,
        },
        {
            "check": f"overfit_{overfit_steps}",
            "preset": overfit_preset,
            "value": fit.final_psnr,
            "threshold": OVERFIT_MIN_PSNR,
            "seconds": fit.seconds,
            "budget_s": OVERFIT_BUDGET_S,
            "passed": fit.passed,
        },
    ]
    path = write_csv(out, CALIBRATION_COLUMNS, rows)
    logger.info("calibration written to %s", path)
    return rows


EXPERIMENTS = ("overfit", "maeip_benefit", "two_stage", "pretrain_length", "variants", "equivalence", "calibrate")


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Desk-scale CSformer / MAEIP experiments.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--quick", action="store_true", help="Tiny sizes for a smoke run.")
    parser.add_argument("--preset", default=None, help="Model preset (default depends on the experiment).")
    parser.add_argument("--seeds", type=int, default=None, help="Number of seeds.")
    parser.add_argument("--out", default=str(CALIBRATION_CSV), help="Calibration CSV (calibrate only).")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    setup_logging(args.verbose)

    scale = QUICK if args.quick else FULL
    if args.seeds:
        scale = replace(scale, seeds=tuple(range(args.seeds)))
    nano = args.preset or "csformer-nano"
    match args.experiment:
        case "overfit":
            ok = overfit(args.preset or "csformer-toy", steps=20 if args.quick else 2000).passed or args.quick
        case "maeip_benefit":
            scratch, pre = maeip_benefit(scale, nano)
            ok = pre >= scratch or args.quick
        case "two_stage":
            one, two = two_stage(scale, nano)
            ok = abs(two - one) <= TWO_STAGE_MAX_GAP_DB or args.quick
        case "pretrain_length":
            scores = list(pretrain_length(scale, nano, (0, 1, 2) if args.quick else (0, 2, 4, 8)).values())
            ok = all(b >= a for a, b in zip(scores, scores[1:])) or args.quick
        case "variants":
            variants(scale, nano)
            ok = True
        case "calibrate":
            quick = {"suite_inputs": 1, "overfit_steps": 20} if args.quick else {}
            rows = calibrate(args.out, **quick)
            ok = all(r["passed"] for r in rows) or args.quick
        case _:
            ok = all(r.passed for r in equivalence(preset=nano))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
