from __future__ import annotations

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

from core.errors import ConfigError

# грузим .env из корня проекта
BASE_DIR = Path(__file__).resolve().parents[1]
load_dotenv(BASE_DIR / ".env")

DATA_DIR = BASE_DIR / "data"
SUITES_PATH = DATA_DIR / "suites.yaml"

SCHEMA_VERSION = 1
MAX_DEFAULT_THREADS = 8


def get_threads() -> int:
    """Верхняя граница параллелизма (NLSPEC_THREADS)."""
    raw = os.getenv("NLSPEC_THREADS", "").strip()
    if not raw:
        return max(1, min(os.cpu_count() or 1, MAX_DEFAULT_THREADS))
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"NLSPEC_THREADS must be an integer (got {raw!r})")
    if threads < 1:
        raise ConfigError(f"NLSPEC_THREADS must be >= 1 (got {threads})")
    return threads


def get_log_level() -> int:
    raw = os.getenv("NLSPEC_LOG_LEVEL", "WARNING").strip().upper()
    level = logging.getLevelName(raw)
    if not isinstance(level, int):
        raise ConfigError(f"NLSPEC_LOG_LEVEL is not a logging level (got {raw!r})")
    return level
