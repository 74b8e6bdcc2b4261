"""SQLite ledger of sweep runs."""

import csv
import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

from logger import get_logger

logger = get_logger("aecnr.results_store")

CSV_COLUMNS = [
    "layout",
    "snr_in_db",
    "ser_in_db",
    "algorithm",
    "status",
    "delta_snr_db",
    "delta_ser_db",
    "sd_db",
    "error",
]


@dataclass(frozen=True)
class RunKey:
    """One sweep point."""

    layout: int
    snr_in_db: float
    ser_in_db: float
    algorithm: str

    @property
    def text(self) -> str:
        return f"L{self.layout}|snr{self.snr_in_db:+.2f}|ser{self.ser_in_db:+.2f}|{self.algorithm}"

    @property
    def slug(self) -> str:
        """Filesystem-friendly run name."""
        return f"layout{self.layout}_snr{self.snr_in_db:+g}_ser{self.ser_in_db:+g}_{self.algorithm}"


class ResultStore:
    """Completed and failed runs, keyed by (layout, SNR, SER, algorithm)."""

    def __init__(self, db_path: Union[str, Path] = "results/runs.db"):
        """Initialize store."""
        self.db_path = Path(db_path)
        self.db_path.parent.mkdir(parents=True, exist_ok=True)
        self._init_db()

    def _init_db(self):
        """Create tables if they don't exist."""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS runs (
                    run_key TEXT PRIMARY KEY,
                    layout INTEGER NOT NULL,
                    snr_in_db REAL NOT NULL,
                    ser_in_db REAL NOT NULL,
                    algorithm TEXT NOT NULL,
                    status TEXT NOT NULL,
                    delta_snr_db REAL,
                    delta_ser_db REAL,
                    sd_db REAL,
                    stages TEXT,
                    error TEXT,
                    config_hash TEXT,
                    recorded_at TIMESTAMP DEFAULT CURRENT_TIMESTAMP
                )
            """)
            conn.execute("""
                CREATE INDEX IF NOT EXISTS idx_runs_point
                ON runs(layout, snr_in_db, ser_in_db, algorithm)
            """)
            conn.commit()

    def is_run_done(self, key: RunKey, config_hash: Optional[str] = None) -> bool:
        """True if the run succeeded (under ``config_hash`` when given)."""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute(
                "SELECT config_hash FROM runs WHERE run_key = ? AND status = 'ok'",
                (key.text,),
            )
            row = cursor.fetchone()
            if row is None:
                return False
            return config_hash is None or row[0] == config_hash

    def record_run(
        self,
        key: RunKey,
        metrics: Dict[str, float],
        stages: Optional[Dict[str, Dict[str, float]]] = None,
        config_hash: str = "",
    ):
        """Store a successful run, replacing an earlier attempt."""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """INSERT OR REPLACE INTO runs
                (run_key, layout, snr_in_db, ser_in_db, algorithm, status,
                 delta_snr_db, delta_ser_db, sd_db, stages, error, config_hash)
                VALUES (?, ?, ?, ?, ?, 'ok', ?, ?, ?, ?, NULL, ?)""",
                (
                    key.text,
                    key.layout,
                    key.snr_in_db,
                    key.ser_in_db,
                    key.algorithm,
                    metrics["delta_snr_db"],
                    metrics["delta_ser_db"],
                    metrics["sd_db"],
                    json.dumps(stages or {}, sort_keys=True),
                    config_hash,
                ),
            )
            conn.commit()

    def record_failure(self, key: RunKey, error: str, config_hash: str = ""):
        """Store a failed run; the sweep retries it on resume."""
        with sqlite3.connect(self.db_path) as conn:
            conn.execute(
                """INSERT OR REPLACE INTO runs
                (run_key, layout, snr_in_db, ser_in_db, algorithm, status, error, config_hash)
                VALUES (?, ?, ?, ?, ?, 'failed', ?, ?)""",
                (key.text, key.layout, key.snr_in_db, key.ser_in_db, key.algorithm, error, config_hash),
            )
            conn.commit()
        logger.warning(f"Run {key.text} failed: {error}")

    def fetch_rows(self) -> List[Dict]:
        """All runs in key order."""
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute(
                """SELECT * FROM runs
                ORDER BY layout ASC, snr_in_db ASC, ser_in_db ASC, algorithm ASC"""
            )
            return [dict(row) for row in cursor.fetchall()]

    def stage_metrics(self, key: RunKey) -> Dict[str, Dict[str, float]]:
        """Per-stage metrics of a completed run."""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("SELECT stages FROM runs WHERE run_key = ?", (key.text,))
            row = cursor.fetchone()
            return json.loads(row[0]) if row and row[0] else {}

    def export_csv(self, path: Union[str, Path]) -> Path:
        """Write ``results.csv``; identical content gives identical bytes."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in self.fetch_rows():
                writer.writerow({col: "" if row.get(col) is None else row[col] for col in CSV_COLUMNS})
        return path

    def get_stats(self) -> dict:
        """Run counts by status and algorithm."""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.execute("SELECT status, COUNT(*) FROM runs GROUP BY status")
            by_status = {row[0]: row[1] for row in cursor.fetchall()}
            cursor = conn.execute(
                """SELECT algorithm, COUNT(*) FROM runs
                WHERE status = 'ok' GROUP BY algorithm ORDER BY algorithm"""
            )
            by_algorithm = {row[0]: row[1] for row in cursor.fetchall()}
            return {
                "total_runs": sum(by_status.values()),
                "completed": by_status.get("ok", 0),
                "failed": by_status.get("failed", 0),
                "completed_by_algorithm": by_algorithm,
            }
