"""
Run History Service - SQLite record of runs, epochs and evaluations.

Provides async database operations for storing and retrieving what each
command did. History is opt-in: nothing is written unless SSDNET_HISTORY_DB
names a database file.
"""

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Optional

import aiosqlite

from src.utils.runtime import history_db_path

logger = logging.getLogger("ssdnet.database")

RUN_STATUSES = ("running", "succeeded", "failed")


class RunHistory:
    """
    Async SQLite store of command runs.

    Stores each run's command and resolved configuration, its per-epoch
    losses and any evaluation aggregates.
    """

    def __init__(self, db_path: str):
        self.db_path = db_path

    @classmethod
    def from_env(cls) -> Optional["RunHistory"]:
        """History bound to SSDNET_HISTORY_DB, or None when it is unset."""
        path = history_db_path()
        return cls(path) if path else None

    async def initialize(self):
        """Initialize database and create tables if needed."""
        Path(self.db_path).parent.mkdir(parents=True, exist_ok=True)

        async with aiosqlite.connect(self.db_path) as db:
            await db.executescript("""
                -- One row per command invocation
                CREATE TABLE IF NOT EXISTS runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    command TEXT NOT NULL,
                    config JSON,
                    status TEXT NOT NULL DEFAULT 'running',
                    detail TEXT,
                    started_at TIMESTAMP,
                    finished_at TIMESTAMP
                );

                -- Training progress
                CREATE TABLE IF NOT EXISTS epochs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL,
                    epoch INTEGER NOT NULL,
                    loss REAL,
                    lr REAL,
                    FOREIGN KEY (run_id) REFERENCES runs(id)
                );

                -- Metric aggregates
                CREATE TABLE IF NOT EXISTS evaluations (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    run_id INTEGER NOT NULL,
                    title TEXT,
                    image_count INTEGER,
                    aggregates JSON,
                    FOREIGN KEY (run_id) REFERENCES runs(id)
                );

                CREATE INDEX IF NOT EXISTS idx_epochs_run
                    ON epochs(run_id);
                CREATE INDEX IF NOT EXISTS idx_evaluations_run
                    ON evaluations(run_id);
            """)
            await db.commit()
            logger.debug(f"Run history initialized at {self.db_path}")

    async def start_run(self, command: str, config: dict) -> int:
        """
        Record the start of a command.

        Args:
            command: Sub-command name
            config: Fully resolved configuration

        Returns:
            Run ID
        """
        async with aiosqlite.connect(self.db_path) as db:
            cursor = await db.execute(
                "INSERT INTO runs (command, config, started_at) VALUES (?, ?, ?)",
                (command, json.dumps(config, sort_keys=True, default=str), datetime.now().isoformat()),
            )
            await db.commit()
            run_id = cursor.lastrowid
            logger.debug(f"Started run #{run_id} ({command})")
            return run_id

    async def log_epoch(self, run_id: int, epoch: int, loss: float, lr: float) -> None:
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute(
                "INSERT INTO epochs (run_id, epoch, loss, lr) VALUES (?, ?, ?, ?)",
                (run_id, epoch, loss, lr),
            )
            await db.commit()

    async def log_evaluation(self, run_id: int, report) -> int:
        """
        Save the aggregates of a MetricsReport.

        Returns:
            Evaluation record ID
        """
        aggregates = {
            name: (value if value is None or value != float("inf") else "inf")
            for name, value in report.aggregate().items()
        }
        async with aiosqlite.connect(self.db_path) as db:
            cursor = await db.execute(
                "INSERT INTO evaluations (run_id, title, image_count, aggregates) VALUES (?, ?, ?, ?)",
                (run_id, report.title, len(report), json.dumps(aggregates, sort_keys=True)),
            )
            await db.commit()
            return cursor.lastrowid

    async def finish_run(self, run_id: int, status: str, detail: Optional[str] = None) -> None:
        if status not in RUN_STATUSES:
            raise ValueError(f"status must be one of {RUN_STATUSES}, got {status!r}")
        async with aiosqlite.connect(self.db_path) as db:
            await db.execute(
                "UPDATE runs SET status = ?, detail = ?, finished_at = ? WHERE id = ?",
                (status, detail, datetime.now().isoformat(), run_id),
            )
            await db.commit()
            logger.debug(f"Run #{run_id} finished: {status}")

    async def get_run(self, run_id: int) -> Optional[dict]:
        """
        Get a run with its epochs and evaluations.

        Args:
            run_id: Run ID

        Returns:
            Run dict or None
        """
        async with aiosqlite.connect(self.db_path) as db:
            db.row_factory = aiosqlite.Row

            cursor = await db.execute("SELECT * FROM runs WHERE id = ?", (run_id,))
            row = await cursor.fetchone()
            if not row:
                return None
            run = dict(row)
            run["config"] = json.loads(run["config"]) if run["config"] else {}

            cursor = await db.execute(
                "SELECT epoch, loss, lr FROM epochs WHERE run_id = ? ORDER BY epoch",
                (run_id,),
            )
            run["epochs"] = [dict(r) for r in await cursor.fetchall()]

            cursor = await db.execute(
                "SELECT title, image_count, aggregates FROM evaluations WHERE run_id = ? ORDER BY id",
                (run_id,),
            )
            evaluations = []
            for r in await cursor.fetchall():
                evaluation = dict(r)
                evaluation["aggregates"] = json.loads(evaluation["aggregates"])
                evaluations.append(evaluation)
            run["evaluations"] = evaluations
            return run

    async def get_recent_runs(self, limit: int = 10) -> list[dict]:
        """
        Most recent runs first, with their epoch count and last loss.

        Args:
            limit: Max results to return
        """
        async with aiosqlite.connect(self.db_path) as db:
            db.row_factory = aiosqlite.Row
            cursor = await db.execute(
                """
                SELECT r.id, r.command, r.status, r.started_at, r.finished_at,
                       COUNT(e.id) AS epoch_count,
                       (SELECT loss FROM epochs WHERE run_id = r.id ORDER BY epoch DESC LIMIT 1) AS last_loss
                FROM runs r
                LEFT JOIN epochs e ON e.run_id = r.id
                GROUP BY r.id
                ORDER BY r.id DESC
                LIMIT ?
                """,
                (limit,),
            )
            rows = await cursor.fetchall()
            return [dict(row) for row in rows]
