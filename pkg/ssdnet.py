"""
SSD-Net - Underwater image enhancement by spatial-spectral decomposition.

Main entry point for the command-line tool. Handles environment loading,
logging setup, sub-command dispatch and the mapping from errors to exit codes.
"""

import argparse
import logging
import sys
from typing import Optional

from dotenv import load_dotenv

from src.commands import admin, data, training
from src.core.errors import (
    CheckpointError,
    ConfigError,
    InputError,
    NumericError,
    PPMError,
    ShapeError,
    SSDNetError,
)
from src.utils.runtime import log_level

logger = logging.getLogger("ssdnet")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

# Checked in order; the first matching class decides the exit code.
EXIT_CODES: tuple[tuple[type[BaseException], int], ...] = (
    (NumericError, EXIT_NUMERIC),
    (PPMError, EXIT_IO),
    (CheckpointError, EXIT_IO),
    (OSError, EXIT_IO),
    (ConfigError, EXIT_CONFIG),
    (InputError, EXIT_CONFIG),
    (ShapeError, EXIT_CONFIG),
    (SSDNetError, EXIT_FAILURE),
)


def setup_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else log_level(),
        format="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ssdnet",
        description="Underwater image enhancement with a spatial-spectral dual network",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    for module in (data, training, admin):
        module.register(subparsers)
    return parser


def exit_code_for(error: BaseException) -> int:
    for error_type, code in EXIT_CODES:
        if isinstance(error, error_type):
            return code
    return EXIT_FAILURE


def main(argv: Optional[list[str]] = None) -> int:
    """Parse argv, run one sub-command and return its exit code."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code or 0)

    try:
        setup_logging(args.verbose)
    except ValueError as e:
        print(f"invalid log level: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.warning("Interrupted")
        return EXIT_FAILURE
    except (SSDNetError, OSError) as e:
        code = exit_code_for(e)
        logger.error(f"{args.command} failed ({type(e).__name__}): {e}")
        logger.debug("Traceback:", exc_info=e)
        return code


if __name__ == "__main__":
    sys.exit(main())
