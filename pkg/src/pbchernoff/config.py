"""
Runtime settings loaded from environment variables.

A `.env` file in the project root is loaded first, so local overrides do
not need to be exported in the shell.
"""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).parent.parent.parent
DEFAULT_SEED = 20240501
DEFAULT_WORKERS = 4
LOG_LEVELS = ("CRITICAL", "ERROR", "WARNING", "INFO", "DEBUG")


class Settings(BaseModel):
    log_dir: Path = PROJECT_ROOT / "logs"
    log_level: str = "INFO"
    workers: int = Field(default=DEFAULT_WORKERS, ge=1)
    seed: int = Field(default=DEFAULT_SEED, ge=0, lt=2 ** 64)
    run_logs: bool = True

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        level = value.upper()
        if level not in LOG_LEVELS:
            raise ValueError(f"unknown log level {value!r}")
        return level


_settings: Optional[Settings] = None


def _env(name: str) -> Optional[str]:
    value = os.getenv(name)
    return value if value not in (None, "") else None


def load_settings() -> Settings:
    """Read PBC_* variables (after loading the project .env) into Settings."""
    load_dotenv(PROJECT_ROOT / ".env")
    raw = {
        "log_dir": _env("PBC_LOG_DIR"),
        "log_level": _env("PBC_LOG_LEVEL"),
        "workers": _env("PBC_WORKERS"),
        "seed": _env("PBC_SEED"),
        "run_logs": _env("PBC_RUN_LOGS"),
    }
    return Settings(**{k: v for k, v in raw.items() if v is not None})


def get_settings() -> Settings:
    """Cached settings instance."""
    global _settings
    if _settings is None:
        _settings = load_settings()
        logger.debug(f"Settings loaded: {_settings.model_dump()}")
    return _settings


def reset_settings() -> None:
    global _settings
    _settings = None
