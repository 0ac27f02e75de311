"""Console and rotating-file logging for dsvae_lab commands."""

from __future__ import annotations

import json
import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Mapping

LOGGER_NAME = "dsvae_lab"
LOG_FILE = "dsvae_lab.log"
CONSOLE_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"
FILE_FORMAT = "%(asctime)s [%(levelname)s] %(name)s [%(command)s]: %(message)s"
MAX_LOG_BYTES = 10 * 1024 * 1024
LOG_BACKUPS = 5


class RunContextFilter(logging.Filter):
    """Stamps the running command on every record; ``iteration`` defaults to None."""

    def __init__(self, command: str) -> None:
        super().__init__()
        self.command = command

    def filter(self, record: logging.LogRecord) -> bool:
        record.command = self.command
        if not hasattr(record, "iteration"):
            record.iteration = None
        return True


class ColorFormatter(logging.Formatter):
    """Wraps console lines in ANSI level colours when stderr is a terminal."""

    COLORS = {
        "DEBUG": "\033[36m",  # cyan
        "INFO": "\033[32m",  # green
        "WARNING": "\033[33m",  # yellow
        "ERROR": "\033[31m",  # red
        "CRITICAL": "\033[35m",  # magenta
    }
    RESET = "\033[0m"

    def __init__(self, fmt: str, *, use_color: bool) -> None:
        super().__init__(fmt)
        self.use_color = use_color and sys.stderr.isatty()

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        color = self.COLORS.get(record.levelname) if self.use_color else None
        return f"{color}{message}{self.RESET}" if color else message


class JsonFormatter(logging.Formatter):
    """One JSON object per line; training records also carry their iteration."""

    def format(self, record: logging.LogRecord) -> str:
        payload: Dict[str, Any] = {
            "timestamp": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "command": getattr(record, "command", None),
            "message": record.getMessage(),
        }
        iteration = getattr(record, "iteration", None)
        if iteration is not None:
            payload["iteration"] = int(iteration)
        if record.exc_info:
            payload["exception"] = self.formatException(record.exc_info)
        return json.dumps(payload, ensure_ascii=False)


def _console_handler(level: int, use_color: bool) -> logging.Handler:
    handler = logging.StreamHandler()
    handler.setLevel(level)
    handler.setFormatter(ColorFormatter(CONSOLE_FORMAT, use_color=use_color))
    return handler


def _file_handler(log_dir: Path, level: int, json_logs: bool) -> logging.Handler:
    log_dir.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(log_dir / LOG_FILE, maxBytes=MAX_LOG_BYTES, backupCount=LOG_BACKUPS, encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(JsonFormatter() if json_logs else logging.Formatter(FILE_FORMAT))
    return handler


def configure_logging(config: Mapping[str, object], *, command: str = "-") -> logging.Logger:
    """Attach a console handler and, when ``log_dir`` is set, a rotating file handler.

    Levels accept names or numbers. Handlers from an earlier call are closed
    first, so commands run back to back in one process never log twice.
    """

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.DEBUG)
    logger.propagate = False
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    context = RunContextFilter(command)
    handlers = [_console_handler(_coerce_level(config.get("console_level")), bool(config.get("color", True)))]
    log_dir = config.get("log_dir")
    if log_dir:
        handlers.append(_file_handler(Path(str(log_dir)), _coerce_level(config.get("file_level")), bool(config.get("json_logs"))))
    for handler in handlers:
        handler.addFilter(context)
        logger.addHandler(handler)
    return logger


def _coerce_level(level: object) -> int:
    if isinstance(level, int):
        return level
    if isinstance(level, str):
        value = getattr(logging, level.upper(), None)
        if isinstance(value, int):
            return value
    return logging.INFO


__all__ = ["LOGGER_NAME", "LOG_FILE", "JsonFormatter", "RunContextFilter", "configure_logging"]
