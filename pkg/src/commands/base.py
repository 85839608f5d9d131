"""
Command Helpers - Shared flags, settings resolution and run tracking.
"""

import argparse
import asyncio
import logging
from typing import Any, Iterable, Optional

from src.services.database import RunHistory
from src.utils.config import Settings, describe_settings, resolve_settings

logger = logging.getLogger("ssdnet.commands")

# Flags named after config keys. Only flags present on a sub-command are read.
OVERRIDE_FLAGS = (
    "seed",
    "epochs",
    "batch_size",
    "lr_start",
    "lr_end",
    "alpha",
    "beta",
    "eval_every",
    "grad_clip",
    "width",
    "cascade_depth",
    "ast_depth",
    "heads",
    "attention_mode",
    "n_train",
    "n_test",
    "image_width",
    "image_height",
)


def add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH", help="flat key = value config file")


def add_model_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("model")
    group.add_argument("--width", type=int, help="feature channels C")
    group.add_argument("--cascade-depth", type=int, metavar="N", help="PFDB/BFCB pairs")
    group.add_argument("--ast-depth", type=int, metavar="M", help="transformer blocks per PFDB")
    group.add_argument("--heads", type=int, help="attention heads")
    group.add_argument("--attention-mode", choices=("adaptive", "dense", "sparse"))


def add_train_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("training")
    group.add_argument("--seed", type=int)
    group.add_argument("--epochs", type=int)
    group.add_argument("--batch-size", type=int)
    group.add_argument("--lr-start", type=float)
    group.add_argument("--lr-end", type=float)
    group.add_argument("--alpha", type=float, help="weight of SSIM(x', x)")
    group.add_argument("--beta", type=float, help="weight of L1(x', x)")
    group.add_argument("--eval-every", type=int, metavar="EPOCHS")
    group.add_argument("--grad-clip", type=float, metavar="NORM")


def settings_from_args(args: argparse.Namespace, base: Optional[Settings] = None) -> Settings:
    """Resolve the config file and any override flags on this namespace."""
    overrides = {key: getattr(args, key) for key in OVERRIDE_FLAGS if getattr(args, key, None) is not None}
    return resolve_settings(getattr(args, "config", None), overrides, base)


def log_settings(command: str, settings: Settings, sections: Optional[Iterable[str]] = None) -> None:
    logger.info(f"{command}: {describe_settings(settings, sections)}")


class RunTracker:
    """
    Records a command in the run history when SSDNET_HISTORY_DB is set.

    A no-op otherwise. Use as a context manager; the run is marked failed if
    the block raises.
    """

    def __init__(self, command: str, config: dict[str, Any]):
        self.command = command
        self.config = config
        self.history = RunHistory.from_env()
        self.run_id: Optional[int] = None
        self.failure: Optional[str] = None

    def __enter__(self) -> "RunTracker":
        if self.history:
            asyncio.run(self.history.initialize())
            self.run_id = asyncio.run(self.history.start_run(self.command, self.config))
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if self.history and self.run_id is not None:
            detail = (str(exc) or type(exc).__name__) if exc is not None else self.failure
            status = "succeeded" if detail is None else "failed"
            asyncio.run(self.history.finish_run(self.run_id, status, detail))
        return False

    def mark_failed(self, detail: str) -> None:
        """Record a failure that does not raise (a tolerance check, for example)."""
        self.failure = detail

    def epoch(self, record) -> None:
        if self.history and self.run_id is not None:
            asyncio.run(self.history.log_epoch(self.run_id, record.epoch, record.loss, record.lr))

    def evaluation(self, report) -> None:
        if self.history and self.run_id is not None:
            asyncio.run(self.history.log_evaluation(self.run_id, report))
