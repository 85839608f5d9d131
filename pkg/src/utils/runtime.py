"""
Runtime Environment - Process-level settings read from environment variables.

Values come from the process environment, which the entry script populates
from ``.env`` via python-dotenv.
"""

import os
from typing import Optional

from src.core.errors import ConfigError

THREADS_ENV = "SSDNET_THREADS"
LOG_LEVEL_ENV = "SSDNET_LOG_LEVEL"
HISTORY_DB_ENV = "SSDNET_HISTORY_DB"

DEFAULT_LOG_LEVEL = "INFO"


def worker_count() -> int:
    """Worker-thread cap from SSDNET_THREADS (default 1)."""
    raw = os.getenv(THREADS_ENV, "1").strip()
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {value}")
    return value


def log_level() -> str:
    return os.getenv(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL).upper()


def history_db_path() -> Optional[str]:
    """Run-history database path, or None when history is disabled."""
    value = os.getenv(HISTORY_DB_ENV, "").strip()
    return value or None
