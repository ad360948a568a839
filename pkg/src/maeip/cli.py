"""Command-line entry point: ``maeip <subcommand> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .configfile import load_json
from .console import COLORS, console, err_console, pass_fail, results_table, setup_logging, style
from .csvlog import write_csv, write_rows
from .data.degrade import Task, degrade_for_task, synth_corpus
from .data.images import load_dir, load_pairs, load_png, save_png
from .data.metrics import aggregate, evaluate_pair
from .errors import CheckpointError, ConfigError, ImageError, MaeipError, ShapeError
from .gradsuite import run_gradient_suite
from .inference.infer import BENCH_COLUMNS, bench_resolution, infer_full_image
from .inference.padding import PadPath
from .model.checkpoint import load_checkpoint, load_into, save_checkpoint
from .model.config import ModelConfig, get_preset
from .model.params import ModelParams, init_params
from .pretrain.masking import FILL_PARAM
from .pretrain.pretrain import PretrainConfig, run_pretrain, write_loss_csv
from .train.finetune import FinetuneConfig, load_state, make_pairs, run_finetune

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_FILE = 4
EXIT_CHECKPOINT = 5
EXIT_SHAPE = 6
EXIT_IMAGE = 7

EVAL_COLUMNS = ("name", "psnr", "ssim", "mae")
DEFAULT_BENCH_SIZES = "16x16,17x23,100x100,128x128"


def _size(text: str) -> tuple[int, int]:
    """``"96"`` or ``"17x23"`` -> ``(h, w)``."""
    try:
        parts = [int(p) for p in text.lower().split("x")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}") from None
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise argparse.ArgumentTypeError(f"invalid size {text!r}")
    return parts[0], parts[1]


def _sizes(text: str) -> list[tuple[int, int]]:
    return [_size(s) for s in text.split(",") if s]


def _merge(path: str | None, overrides: dict[str, Any]) -> dict[str, Any]:
    """File values overridden by the flags that were given."""
    data = load_json(path) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return data


def _load_model(checkpoint: str, preset: str) -> tuple[ModelParams, ModelConfig]:
    ckpt = load_checkpoint(checkpoint)
    config = (ckpt.config or get_preset(preset)).with_updates(pretrain_mode=False)
    params = init_params(config)
    load_into(params, ckpt.params, strict=True)
    return params, config


def _loss(value: float | None) -> str:
    return "-" if value is None else f"{value:.5f}"


def _match_channels(config: ModelConfig, channels: int) -> ModelConfig:
    if config.in_channels == channels:
        return config
    logger.info("data has %d channels; adapting the model config", channels)
    return config.with_updates(in_channels=channels, out_channels=channels)


# =============================================================================
# SUBCOMMANDS
# =============================================================================


def cmd_pretrain(args: argparse.Namespace) -> int:
    overrides = {
        "patch_size": args.patch_size,
        "mask_ratio": args.mask_ratio,
        "epochs": args.epochs,
        "stage_split": args.stage_split,
        "lambda_dec": args.lambda_dec,
        "fill_mode": args.fill_mode,
        "corpus_dir": args.corpus_dir,
        "seed": args.seed,
        "variant": args.variant,
        "crop": args.crop,
        "batch": args.batch,
        "steps_per_epoch": args.steps_per_epoch,
    }
    config = PretrainConfig.from_dict(_merge(args.config, overrides))
    if config.corpus_dir:
        corpus = [img.data for _, img in load_dir(config.corpus_dir)]
    else:
        side = max(args.synthetic_size, config.crop)
        corpus = synth_corpus(args.synthetic, side, side, config.seed)
    if not corpus:
        raise ConfigError("pre-training corpus is empty")
    model_config = _match_channels(get_preset(args.preset), corpus[0].shape[0])

    result = run_pretrain(corpus, model_config, config, show_progress=not args.quiet)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tensors = {**result.state.params, **result.state.head}
    if result.state.fill is not None:
        tensors[FILL_PARAM] = result.state.fill
    meta = {"kind": "pretrain", "variant": config.variant.name.lower(), "epochs": config.epochs}
    save_checkpoint(out, tensors, model_config.with_updates(pretrain_mode=True), meta=meta)
    loss_csv = write_loss_csv(args.loss_csv or out.with_name(out.stem + "_loss.csv"), result.history)

    table = results_table("pre-training", ["epoch", "stage", "loss_enc", "loss_dec"])
    for entry in result.history:
        table.add_row(str(entry.epoch), entry.stage.name.lower(), _loss(entry.loss_enc), _loss(entry.loss_dec))
    console.print(table)
    console.print(f"[{style('info_text')}]checkpoint[/] {out}  [{style('info_text')}]loss curve[/] {loss_csv}")
    return EXIT_OK


def cmd_finetune(args: argparse.Namespace) -> int:
    overrides = {
        "task": args.task,
        "crop": args.crop,
        "batch": args.batch,
        "steps": args.steps,
        "lr": args.lr,
        "seed": args.seed,
        "init_checkpoint": args.init_checkpoint,
        "out_dir": args.out_dir,
        "clean_dir": args.clean_dir,
        "degraded_dir": args.degraded_dir,
    }
    data = _merge(args.config, overrides)
    data.setdefault("out_dir", "runs/finetune")
    config = FinetuneConfig.from_dict(data)

    if config.task is Task.PAIRS:
        loaded = load_pairs(config.clean_dir, config.degraded_dir)
        pairs = make_pairs(Task.PAIRS, [c.data for _, c, _ in loaded], degraded=[d.data for _, _, d in loaded])
    else:
        if config.clean_dir:
            clean = [img.data for _, img in load_dir(config.clean_dir)]
        else:
            side = max(args.synthetic_size, config.crop)
            clean = synth_corpus(args.synthetic, side, side, config.seed)
        pairs = make_pairs(config.task, clean, config.seed)
    if not pairs:
        raise ConfigError("no training images")

    state = None
    if args.resume:
        state, model_config = load_state(args.resume, get_preset(args.preset), config.weight_decay)
    else:
        model_config = _match_channels(get_preset(args.preset), pairs[0][0].shape[0])
    result = run_finetune(pairs, model_config, config, state=state, show_progress=not args.quiet)

    if result.load_report is not None:
        report = result.load_report
        console.print(
            f"[{style('info_text')}]initialised[/] {len(report.loaded)} tensors from {config.init_checkpoint}, "
            f"{len(report.fresh)} fresh, {len(report.unused)} unused"
        )
    if result.log:
        last = result.log[-1]
        table = results_table("fine-tuning", ["task", "steps", "loss", "train PSNR (dB)"])
        table.add_row(config.task.value, str(result.state.step), f"{last.loss:.5f}", f"{last.train_psnr:.2f}")
        console.print(table)
    console.print(f"[{style('info_text')}]checkpoint[/] {result.checkpoint}")
    return EXIT_OK


def cmd_infer(args: argparse.Namespace) -> int:
    params, config = _load_model(args.checkpoint, args.preset)
    image = load_png(args.input)
    if image.channels != config.in_channels:
        raise ShapeError(f"{args.input} has {image.channels} channels, the model expects {config.in_channels}")
    restored = infer_full_image(image.data, params, config, PadPath[args.path.upper()]).data[0]
    save_png(args.out, restored)
    console.print(f"[{style('pass_text')}]wrote[/] {args.out} ({image.height}x{image.width})")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    if args.checkpoint:
        params, config = _load_model(args.checkpoint, args.preset)
    else:
        config = get_preset(args.preset)
        params = init_params(config, args.seed)
    rng = np.random.default_rng(args.seed)
    paths = tuple(PadPath[p.upper()] for p in args.paths.split(","))
    rows = []
    for h, w in _sizes(args.sizes):
        rows.extend(bench_resolution(params, config, h, w, rng, paths, args.batch))

    table = results_table("padded inference", list(BENCH_COLUMNS))
    for row in rows:
        table.add_row(
            str(row.H),
            str(row.W),
            row.path,
            f"{row.macs_total:,}",
            f"{row.macs_conv:,}",
            f"{row.macs_attn:,}",
            f"{row.wall_ms:.1f}",
            f"{row.max_abs_diff_vs_baseline:.2e}",
        )
    console.print(table)
    if args.csv:
        write_csv(args.csv, BENCH_COLUMNS, (r.as_dict() for r in rows))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    rows = run_gradient_suite(args.config, inputs=args.inputs, seed=args.seed, tol=args.tol)
    table = results_table("gradient check (64-bit)", ["case", "inputs", "max rel err", "time (s)", "result"])
    for row in rows:
        table.add_row(row.name, str(row.inputs), f"{row.max_rel_err:.2e}", f"{row.seconds:.1f}", pass_fail(row.passed))
    console.print(table)
    worst = max(r.max_rel_err for r in rows)
    ok = all(r.passed for r in rows)
    console.print(f"max rel err {worst:.3e} {pass_fail(ok)}")
    return EXIT_OK if ok else EXIT_ERROR


def cmd_synth(args: argparse.Namespace) -> int:
    h, w = args.size
    images = synth_corpus(args.count, h, w, args.seed, args.channels)
    out = Path(args.out)
    clean_dir = out / "clean" if args.task else out
    task = Task.parse(args.task) if args.task else None
    rng = np.random.default_rng([args.seed, 11])
    for i, img in enumerate(images):
        save_png(clean_dir / f"{i:04d}.png", img)
        if task is not None:
            save_png(out / "degraded" / f"{i:04d}.png", degrade_for_task(task, img, rng))
    console.print(f"[{style('pass_text')}]wrote[/] {len(images)} images of {h}x{w} to {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    reference_dir, restored_dir = args.pairs
    records = [evaluate_pair(name, b.data, a.data) for name, a, b in load_pairs(reference_dir, restored_dir)]
    if not records:
        raise ConfigError(f"no PNG pairs in {reference_dir} and {restored_dir}")
    rows = [r.as_dict() for r in records] + [aggregate(records).as_dict()]
    if args.csv:
        write_csv(args.csv, EVAL_COLUMNS, rows)
        table = results_table("evaluation", list(EVAL_COLUMNS))
        for row in rows:
            table.add_row(row["name"], f"{row['psnr']:.2f}", f"{row['ssim']:.4f}", f"{row['mae']:.5f}")
        console.print(table)
    else:
        write_rows(sys.stdout, EVAL_COLUMNS, rows)
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maeip", description="CSformer restoration with MAEIP pre-training.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging and NaN/Inf op checks.")
    parser.add_argument("-q", "--quiet", action="store_true", help="Hide progress bars.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="MAEIP pre-training on clean images.")
    p.add_argument("--config", help="JSON file with pre-training keys.")
    p.add_argument("--preset", default="csformer-nano", help="Model preset.")
    p.add_argument("--patch-size", type=int)
    p.add_argument("--mask-ratio", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--stage-split", type=float)
    p.add_argument("--lambda-dec", type=float)
    p.add_argument("--fill-mode", choices=("zero", "learned"))
    p.add_argument("--variant", choices=("none", "encoder", "decoder", "maeip", "two_stage"))
    p.add_argument("--corpus-dir", help="Directory of clean PNGs (default: synthetic corpus).")
    p.add_argument("--synthetic", type=int, default=32, help="Synthetic corpus size without --corpus-dir.")
    p.add_argument("--synthetic-size", type=int, default=96, help="Side of synthetic images.")
    p.add_argument("--crop", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="runs/pretrain/maeip.cskpt", help="Checkpoint path.")
    p.add_argument("--loss-csv", help="Loss curve CSV (default: next to the checkpoint).")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="Fine-tune on a restoration task.")
    p.add_argument("--config", help="JSON file with fine-tuning keys.")
    p.add_argument("--preset", default="csformer-nano", help="Model preset.")
    p.add_argument("--task", choices=[t.value for t in Task])
    p.add_argument("--crop", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-checkpoint", help="Pre-trained weights to start from.")
    p.add_argument("--resume", help="Fine-tuning checkpoint to continue.")
    p.add_argument("--out-dir")
    p.add_argument("--clean-dir")
    p.add_argument("--degraded-dir")
    p.add_argument("--synthetic", type=int, default=8, help="Synthetic image count without --clean-dir.")
    p.add_argument("--synthetic-size", type=int, default=96)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("infer", help="Restore one image at full resolution.")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--path", choices=("feature", "baseline", "unmasked"), default="feature")
    p.add_argument("--preset", default="csformer-nano", help="Model preset when the checkpoint has no sidecar.")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="MACs, wall time and equivalence of the padding paths.")
    p.add_argument("--preset", default="csformer-nano")
    p.add_argument("--checkpoint")
    p.add_argument("--sizes", default=DEFAULT_BENCH_SIZES, help="Comma-separated HxW list.")
    p.add_argument("--paths", default="feature,baseline,unmasked")
    p.add_argument("--batch", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient suite.")
    p.add_argument("--config", default="csformer-nano", help="Model preset for the whole-model check.")
    p.add_argument("--inputs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="Write a procedural clean corpus (and degraded copies).")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=_size, default=(96, 96), help="Side or HxW.")
    p.add_argument("--channels", type=int, choices=(1, 3), default=3)
    p.add_argument("--task", choices=[t.value for t in Task if t is not Task.PAIRS])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="PSNR/SSIM/MAE of restored images against references.")
    p.add_argument("--pairs", nargs=2, metavar=("CLEAN_DIR", "RESTORED_DIR"), required=True)
    p.add_argument("--csv", help="Write here instead of stdout.")
    p.set_defaults(func=cmd_eval)
    return parser


def run_cli(argv: Sequence[str] | None = None) -> int:
    """Parse, run one subcommand and map failures to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    setup_logging(args.verbose)

    def fail(code: int, kind: str, exc: object) -> int:
        err_console.print(f"[bold {COLORS['error_text']}]{kind}:[/] {exc}")
        return code

    try:
        return args.func(args)
    except ConfigError as exc:
        return fail(EXIT_CONFIG, "invalid config", exc)
    except FileNotFoundError as exc:
        return fail(EXIT_MISSING_FILE, "file not found", exc.filename or exc)
    except CheckpointError as exc:
        return fail(EXIT_CHECKPOINT, "bad checkpoint", exc)
    except ShapeError as exc:
        return fail(EXIT_SHAPE, "shape error", exc)
    except ImageError as exc:
        return fail(EXIT_IMAGE, "unreadable image", exc)
    except MaeipError as exc:
        return fail(EXIT_ERROR, "error", exc)


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
