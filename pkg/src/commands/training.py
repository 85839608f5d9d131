"""
Training Commands - train, eval and infer.

Each command resolves its settings, logs them, does its work and prints
where the results went.
"""

import argparse
import json
import logging
from pathlib import Path

from src.commands.base import (
    RunTracker,
    add_config_flag,
    add_model_flags,
    add_train_flags,
    log_settings,
    settings_from_args,
)
from src.core.errors import InputError
from src.services.checkpoint import load_checkpoint
from src.services.images import ImageBuffer, encode_signed, read_ppm, write_ppm
from src.services.synth import DatasetManifest
from src.services.trainer import evaluate, evaluate_unpaired, infer, score_inputs, train
from src.utils.config import Settings
from src.utils.files import atomic_write_text

logger = logging.getLogger("ssdnet.training")

METRICS_NAME = "metrics.tsv"
BASELINE_NAME = "baseline.tsv"


def cmd_train(args: argparse.Namespace) -> int:
    """
    Train on a manifest's train split.

    Usage: train --manifest PATH --out DIR [--checkpoint RESUME] [overrides]
    """
    initial = load_checkpoint(args.checkpoint) if args.checkpoint else None
    settings = settings_from_args(args, base=Settings(model=initial.config) if initial else None)
    if initial:
        logger.info(f"Resuming from {args.checkpoint} at step {initial.step}")
    log_settings("train", settings)

    manifest = DatasetManifest.load(args.manifest)
    with RunTracker("train", settings.to_flat()) as tracker:
        result = train(
            settings.model,
            settings.train,
            manifest,
            args.out,
            initial=initial,
            on_epoch=tracker.epoch,
            on_evaluation=lambda epoch, report: tracker.evaluation(report),
        )
    print(result.checkpoint_path)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """
    Score a checkpoint on a manifest split or on unpaired images.

    Usage: eval --checkpoint PATH (--manifest PATH | --unpaired DIR) --out DIR [--baseline]
    """
    checkpoint = load_checkpoint(args.checkpoint)
    log_settings("eval", Settings(model=checkpoint.config), sections=("model",))
    logger.info(f"eval: checkpoint={args.checkpoint} step={checkpoint.step}")
    out_dir = Path(args.out)

    with RunTracker("eval", {"checkpoint": str(args.checkpoint), **checkpoint.config.to_dict()}) as tracker:
        if args.unpaired:
            paths = sorted(Path(args.unpaired).glob("*.ppm"))
            if not paths:
                raise InputError(f"no .ppm files in {args.unpaired}")
            report = evaluate_unpaired(checkpoint, paths)
        else:
            manifest = DatasetManifest.load(args.manifest)
            report = evaluate(checkpoint, manifest, split=args.split)
            if args.baseline:
                baseline = score_inputs(manifest, split=args.split)
                baseline.write_tsv(out_dir / BASELINE_NAME)
                print(baseline.to_table())
                tracker.evaluation(baseline)
        report.write_tsv(out_dir / METRICS_NAME)
        tracker.evaluation(report)

    print(report.to_table())
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    """
    Enhance one PPM.

    Writes clean.ppm (x_c clamped), residual.ppm and residual.json, and
    recomposed.ppm (x' clamped). The residual is x' minus clean.ppm as it
    reads back, mapped to [0, 1]; residual.json holds the inverse map, so
    clean.ppm plus the decoded residual gives x' back to within half a
    residual quantisation step.
    """
    checkpoint = load_checkpoint(args.checkpoint)
    log_settings("infer", Settings(model=checkpoint.config), sections=("model",))
    model = checkpoint.to_model()
    image = read_ppm(args.input)
    logger.info(f"infer: {args.input} ({image.width}×{image.height}) with {args.checkpoint} "
                f"at step {checkpoint.step}")

    out = infer(model, image)
    out_dir = Path(args.out)
    clean = ImageBuffer.from_array(out.clean.data[0]).quantized()
    recomposed = out.recomposed.data[0].transpose(1, 2, 0)
    residual, mapping = encode_signed(recomposed - clean.pixels)

    write_ppm(out_dir / "clean.ppm", clean)
    write_ppm(out_dir / "residual.ppm", residual)
    atomic_write_text(out_dir / "residual.json", json.dumps(mapping.to_dict(), indent=2, sort_keys=True) + "\n")
    write_ppm(out_dir / "recomposed.ppm", ImageBuffer.from_array(recomposed))
    print(out_dir)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="train a model on a synthetic manifest")
    add_config_flag(parser)
    parser.add_argument("--manifest", required=True, metavar="PATH")
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.add_argument("--checkpoint", metavar="PATH", help="resume from this checkpoint")
    add_model_flags(parser)
    add_train_flags(parser)
    parser.set_defaults(handler=cmd_train)

    parser = subparsers.add_parser("eval", help="score a checkpoint")
    parser.add_argument("--checkpoint", required=True, metavar="PATH")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--manifest", metavar="PATH")
    source.add_argument("--unpaired", metavar="DIR", help="UIQM/UCIQE over every .ppm in DIR")
    parser.add_argument("--split", choices=("train", "test"), default="test")
    parser.add_argument("--baseline", action="store_true", help="also score the unenhanced inputs")
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.set_defaults(handler=cmd_eval)

    parser = subparsers.add_parser("infer", help="enhance one image")
    parser.add_argument("--checkpoint", required=True, metavar="PATH")
    parser.add_argument("--input", required=True, metavar="PPM")
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.set_defaults(handler=cmd_infer)
