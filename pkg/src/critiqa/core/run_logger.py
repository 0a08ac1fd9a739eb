"""
Run Logging for critiqa

Installs the package log handler (rich console, key=value structured, or JSON
lines) and provides MetricsLogger, which appends per-epoch training records to
a JSON Lines file while echoing them through the python logger.
"""

import json
import logging
import os
import sys
import threading
from collections import deque
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from rich.console import Console
from rich.logging import RichHandler

LOG_LEVEL_ENV = "CRITIQA_LOG_LEVEL"
ROOT_LOGGER = "critiqa"


class LogFormat(Enum):
    """Supported log output formats."""

    CONSOLE = "console"
    STRUCTURED = "structured"
    JSON = "json"


class _StructuredFormatter(logging.Formatter):
    """Format records as key=value pairs."""

    def format(self, record: logging.LogRecord) -> str:
        entry = getattr(record, "entry", None)
        parts = [f"level={record.levelname}", f"logger={record.name}"]
        if entry:
            for key, value in entry.items():
                if isinstance(value, dict):
                    value = json.dumps(value, default=str)
                parts.append(f"{key}={value}")
        else:
            parts.append(f"msg={record.getMessage()}")
        return " ".join(parts)


class _JsonFormatter(logging.Formatter):
    """One JSON object per record."""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "level": record.levelname,
            "logger": record.name,
        }
        entry = getattr(record, "entry", None)
        if entry:
            payload.update(entry)
        else:
            payload["message"] = record.getMessage()
        return json.dumps(payload, default=str)


def resolve_level(level: Optional[Union[str, int]] = None) -> int:
    """Explicit level, else $CRITIQA_LOG_LEVEL, else INFO."""
    if level is None:
        level = os.environ.get(LOG_LEVEL_ENV, "INFO")
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(str(level).upper())
    return resolved if isinstance(resolved, int) else logging.INFO


def setup_logging(
    level: Optional[Union[str, int]] = None,
    fmt: Union[str, LogFormat] = LogFormat.CONSOLE,
) -> logging.Logger:
    """Install one stderr handler on the critiqa logger."""
    fmt = LogFormat(fmt)
    logger = logging.getLogger(ROOT_LOGGER)
    logger.setLevel(resolve_level(level))
    logger.handlers = []
    logger.propagate = False

    if fmt == LogFormat.CONSOLE:
        handler: logging.Handler = RichHandler(
            console=Console(stderr=True), show_path=False, rich_tracebacks=False
        )
        handler.setFormatter(logging.Formatter("%(message)s"))
    else:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(_StructuredFormatter() if fmt == LogFormat.STRUCTURED else _JsonFormatter())
    logger.addHandler(handler)
    return logger


class MetricsLogger:
    """Per-epoch metric records: JSON Lines file plus the python logger."""

    def __init__(
        self,
        name: str = "critiqa.training",
        log_file: Optional[Path] = None,
        buffer_size: int = 1000,
    ):
        self.logger = logging.getLogger(name)
        self.log_file = Path(log_file) if log_file else None
        self.buffer: deque = deque(maxlen=buffer_size)
        self._lock = threading.RLock()
        if self.log_file:
            self.log_file.parent.mkdir(parents=True, exist_ok=True)
            self.log_file.write_text("", encoding="utf-8")

    def log(self, entry: Dict[str, Any]) -> None:
        """Record one metrics object."""
        with self._lock:
            self.buffer.append(entry)
            if self.log_file:
                with open(self.log_file, "a", encoding="utf-8", newline="\n") as f:
                    f.write(json.dumps(entry, sort_keys=False) + "\n")
        self.logger.info(self._format_console(entry), extra={"entry": entry})

    def recent(self, count: int = 100) -> List[Dict[str, Any]]:
        with self._lock:
            return list(self.buffer)[-count:]

    @staticmethod
    def _format_console(entry: Dict[str, Any]) -> str:
        parts = []
        for key, value in entry.items():
            if isinstance(value, float):
                parts.append(f"{key}={value:.4f}")
            else:
                parts.append(f"{key}={value}")
        return " ".join(parts)
