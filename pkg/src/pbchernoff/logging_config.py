"""
Run-scoped logging for validation experiments.

Each run gets its own directory under the configured log dir with:
- run.log: Main timeline
- trials.jsonl: One record per coverage trial
- checks.jsonl: Monte Carlo check summaries
- errors.log: All errors aggregated
"""

import json
import logging
import threading
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from .config import get_settings

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def configure_logging(level: Optional[str] = None) -> None:
    """Root logging setup used by the command-line entry point."""
    logging.basicConfig(level=level or get_settings().log_level, format=LOG_FORMAT)


def new_run_id() -> str:
    """Timestamp-prefixed run identifier, e.g. 20250101-120000-1a2b3c4d."""
    return f"{datetime.now().strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:8]}"


def _json_default(value: Any) -> Any:
    # numpy scalars and arrays
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


class RunLogger:
    """Run-scoped logger that writes to multiple files."""

    def __init__(self, run_id: str, base_dir: Optional[Path] = None):
        self.run_id = run_id
        self.run_dir = Path(base_dir or get_settings().log_dir) / run_id
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self.start_time = datetime.now(timezone.utc)
        self._lock = threading.Lock()

        self._run_log = open(self.run_dir / "run.log", "a", encoding="utf-8")
        self._trials = open(self.run_dir / "trials.jsonl", "a", encoding="utf-8")
        self._checks = open(self.run_dir / "checks.jsonl", "a", encoding="utf-8")
        self._errors_log = open(self.run_dir / "errors.log", "a", encoding="utf-8")

        self.trial_count = 0
        self.violation_count = 0
        self.check_count = 0
        self.error_count = 0

        self.log_run("RUN_START", f"run_id={run_id}")

    def _timestamp(self) -> str:
        return datetime.now(timezone.utc).isoformat()

    def _write(self, file, tag: str, message: str):
        """Write a tagged log line to a file (thread-safe)."""
        with self._lock:
            file.write(f"[{self._timestamp()}] [{tag}] {message}\n")
            file.flush()

    def _write_json(self, file, data: dict):
        """Write a JSON line to a file (thread-safe)."""
        with self._lock:
            record = {**data, "timestamp": self._timestamp()}
            file.write(json.dumps(record, default=_json_default) + "\n")
            file.flush()

    def log_run(self, tag: str, message: str):
        """Log to the run timeline."""
        self._write(self._run_log, tag, message)

    def log_config(self, config: Dict[str, Any]):
        self.log_run("CONFIG", json.dumps(config, default=_json_default, sort_keys=True))

    def log_trial(self, record: Dict[str, Any]):
        """Log one coverage trial; counted for the RUN_END summary."""
        with self._lock:
            self.trial_count += 1
            if record.get("violated"):
                self.violation_count += 1
        self._write_json(self._trials, record)

    def log_check(self, name: str, summary: Dict[str, Any]):
        """Log a Monte Carlo check summary (also logs to the timeline)."""
        with self._lock:
            self.check_count += 1
        self._write_json(self._checks, {"check": name, **summary})
        self.log_run("CHECK", f"{name} passed={summary.get('passed')}")

    def log_error(self, component: str, error: str, traceback: Optional[str] = None):
        """Log error with optional traceback."""
        with self._lock:
            self.error_count += 1
        self._write(self._errors_log, component, error)
        if traceback:
            self._write(self._errors_log, "TRACEBACK", traceback)
        self.log_run("ERROR", f"[{component}] {error[:100]}")

    def close(self):
        """Close all log files and write the final summary."""
        duration = (datetime.now(timezone.utc) - self.start_time).total_seconds()
        self.log_run(
            "RUN_END",
            f"duration={duration:.1f}s, trials={self.trial_count}, "
            f"violations={self.violation_count}, checks={self.check_count}, "
            f"errors={self.error_count}",
        )
        for f in [self._run_log, self._trials, self._checks, self._errors_log]:
            f.close()


# Global registry of run loggers
_run_loggers: Dict[str, RunLogger] = {}
_registry_lock = threading.Lock()


def get_run_logger(run_id: str, base_dir: Optional[Path] = None) -> RunLogger:
    """Get or create the run logger for the given run ID."""
    with _registry_lock:
        if run_id not in _run_loggers:
            _run_loggers[run_id] = RunLogger(run_id, base_dir)
        return _run_loggers[run_id]


def close_run_logger(run_id: str):
    """Close and remove a run logger."""
    with _registry_lock:
        if run_id in _run_loggers:
            _run_loggers[run_id].close()
            del _run_loggers[run_id]
