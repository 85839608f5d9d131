"""
Data Commands - Synthetic dataset generation.
"""

import argparse
import logging

from src.commands.base import RunTracker, add_config_flag, log_settings, settings_from_args
from src.services.synth import make_dataset

logger = logging.getLogger("ssdnet.data")


def cmd_synth(args: argparse.Namespace) -> int:
    """
    Generate paired clean/degraded images and a manifest.

    Usage: synth --out DIR [--n-train N] [--n-test N] [--seed S]
    """
    settings = settings_from_args(args)
    log_settings("synth", settings)
    synth = settings.synth
    with RunTracker("synth", settings.to_flat()):
        manifest = make_dataset(
            synth.n_train,
            synth.n_test,
            settings.train.seed,
            settings.policy,
            args.out,
            size=(synth.image_width, synth.image_height),
        )
    print(manifest.path)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="generate a synthetic paired dataset")
    add_config_flag(parser)
    parser.add_argument("--out", required=True, metavar="DIR", help="output directory")
    parser.add_argument("--n-train", type=int)
    parser.add_argument("--n-test", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--image-width", type=int)
    parser.add_argument("--image-height", type=int)
    parser.set_defaults(handler=cmd_synth)
