"""
Admin Commands - Model inspection and run history.

gradcheck verifies backward() against finite differences on a tiny model,
params reports exact parameter counts, history lists recorded runs.
"""

import argparse
import asyncio
import logging
from dataclasses import replace

from src.commands.base import RunTracker, add_config_flag, add_model_flags, log_settings, settings_from_args
from src.core.errors import ConfigError
from src.model.config import ModelConfig
from src.model.network import param_breakdown, param_count, param_grid
from src.services.database import RunHistory
from src.services.trainer import check_model_gradients
from src.utils.config import Settings
from src.utils.reports import (
    render_gradcheck,
    render_history,
    render_param_breakdown,
    render_param_grid,
    render_param_series,
    render_run,
)

logger = logging.getLogger("ssdnet.admin")

GRADCHECK_TOLERANCE = 1e-3
TINY_MODEL = ModelConfig(width=4, cascade_depth=1, ast_depth=1, heads=2)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("expected at least one integer")
    return values


def cmd_gradcheck(args: argparse.Namespace) -> int:
    """
    Finite-difference check of the total loss through a tiny model.

    Exit 0 iff every parameter group's max relative error is below 1e-3.
    """
    settings = settings_from_args(args, base=Settings(model=TINY_MODEL))
    log_settings("gradcheck", settings)
    with RunTracker("gradcheck", settings.to_flat()) as tracker:
        errors = check_model_gradients(
            settings.model,
            height=args.size,
            width=args.size,
            seed=settings.train.seed,
            step=args.step,
            coords_per_tensor=args.coords or None,
        )
        worst = max(errors.values())
        print(render_gradcheck(errors, GRADCHECK_TOLERANCE))
        if worst >= GRADCHECK_TOLERANCE:
            tracker.mark_failed(f"max relative error {worst:.3e}")
            logger.error(f"Gradient check failed: max relative error {worst:.3e} >= {GRADCHECK_TOLERANCE}")
            return 1
    logger.info(f"Gradient check passed: max relative error {worst:.3e}")
    return 0


def cmd_params(args: argparse.Namespace) -> int:
    """
    Exact parameter counts.

    Prints the per-group breakdown of the resolved config, then counts over
    the requested cascade depths N and AST depths M (or the full N×M grid).
    """
    settings = settings_from_args(args)
    log_settings("params", settings)
    config = settings.model

    print(render_param_breakdown(param_breakdown(config)))
    print(f"total: {param_count(config):,}")
    if args.grid:
        print(render_param_grid(param_grid(args.n_values, args.m_values, config)))
    else:
        n_counts = [param_count(replace(config, cascade_depth=n)) for n in args.n_values]
        print(render_param_series("N", args.n_values, n_counts))
        m_counts = [param_count(replace(config, ast_depth=m)) for m in args.m_values]
        print(render_param_series("M", args.m_values, m_counts))
    return 0


def cmd_history(args: argparse.Namespace) -> int:
    """List recent runs, or show one run with --run ID."""
    history = RunHistory.from_env()
    if history is None:
        raise ConfigError("run history is disabled; set SSDNET_HISTORY_DB to a database path")
    asyncio.run(history.initialize())

    if args.run is not None:
        run = asyncio.run(history.get_run(args.run))
        if run is None:
            print(f"No run #{args.run}.")
            return 1
        print(render_run(run))
    else:
        print(render_history(asyncio.run(history.get_recent_runs(limit=args.limit))))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("gradcheck", help="finite-difference gradient check on a tiny model")
    add_config_flag(parser)
    add_model_flags(parser)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--size", type=int, default=8, help="square image extent")
    parser.add_argument("--step", type=float, default=1e-5)
    parser.add_argument("--coords", type=int, default=4, help="coordinates sampled per tensor (0 = all)")
    parser.set_defaults(handler=cmd_gradcheck)

    parser = subparsers.add_parser("params", help="exact parameter counts")
    add_config_flag(parser)
    add_model_flags(parser)
    parser.add_argument("--n-values", type=_int_list, default=[2, 3, 4, 5, 6], metavar="N,N,...")
    parser.add_argument("--m-values", type=_int_list, default=[2, 3, 4, 5, 6], metavar="M,M,...")
    parser.add_argument("--grid", action="store_true", help="print the full N×M table")
    parser.set_defaults(handler=cmd_params)

    parser = subparsers.add_parser("history", help="recorded runs (needs SSDNET_HISTORY_DB)")
    parser.add_argument("--limit", type=int, default=10)
    parser.add_argument("--run", type=int, metavar="ID")
    parser.set_defaults(handler=cmd_history)
