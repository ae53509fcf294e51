"""
Logging configuration for epicscore.

Records go to a rotating file (everything) and to stderr (at the chosen
level). Inside run_context every line is tagged with the experiment run and
its seed, so interleaved output from benchmark runs stays attributable.
"""

import logging
import sys
from contextlib import contextmanager
from contextvars import ContextVar
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Iterator, Optional

ROOT_LOGGER_NAME = "epicscore"

FILE_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(run)s%(message)s'
CONSOLE_FORMAT = '%(levelname)s - %(run)s%(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'

_run_label: ContextVar[str] = ContextVar("epicscore_run_label", default="")


@contextmanager
def run_context(run_index: int, seed: int) -> Iterator[str]:
    """
    Tag log records emitted inside the block with the run and its seed.

    Args:
        run_index: Zero-based run number.
        seed: Seed the run was drawn with.

    Yields:
        The tag, e.g. "[run 0 seed 3] ".
    """
    label = f"[run {run_index} seed {seed}] "
    token = _run_label.set(label)
    try:
        yield label
    finally:
        _run_label.reset(token)


def current_run_label() -> str:
    """Tag of the innermost active run_context ("" outside any run)."""
    return _run_label.get()


class RunContextFilter(logging.Filter):
    """Stamp each record with the active run tag as `record.run`."""

    def filter(self, record: logging.LogRecord) -> bool:
        if not hasattr(record, "run"):
            record.run = _run_label.get()
        return True


class ColoredFormatter(logging.Formatter):
    """Formatter that colors the level name on the console."""

    COLORS = {
        'DEBUG': '\033[36m',     # Cyan
        'INFO': '\033[32m',      # Green
        'WARNING': '\033[33m',   # Yellow
        'ERROR': '\033[31m',     # Red
        'CRITICAL': '\033[35m',  # Magenta
    }
    RESET = '\033[0m'

    def format(self, record):
        # Color a copy so the file handler sees the plain level name
        record = logging.makeLogRecord(record.__dict__)
        if record.levelname in self.COLORS:
            record.levelname = f"{self.COLORS[record.levelname]}{record.levelname}{self.RESET}"
        return super().format(record)


def _file_handler(log_file: Path, max_bytes: int, backup_count: int) -> logging.Handler:
    log_file.parent.mkdir(parents=True, exist_ok=True)
    handler = RotatingFileHandler(log_file, maxBytes=max_bytes, backupCount=backup_count)
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(logging.Formatter(FILE_FORMAT, datefmt=DATE_FORMAT))
    return handler


def _console_handler(level: int) -> logging.Handler:
    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(level)
    handler.setFormatter(ColoredFormatter(CONSOLE_FORMAT))
    return handler


def setup_logging(
    log_file: Optional[Path] = None,
    log_level: str = "INFO",
    console_output: bool = True,
    max_bytes: int = 10_000_000,  # 10 MB
    backup_count: int = 5
) -> logging.Logger:
    """
    Configure the package logger.

    Repeated calls replace the previous handlers.

    Args:
        log_file: Rotating log file receiving DEBUG and above; None disables it.
        log_level: Console level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        console_output: Enable stderr logging.
        max_bytes: Size at which the log file rotates.
        backup_count: Rotated files to keep.

    Returns:
        The "epicscore" logger.

    Raises:
        ValueError: If log_level is not a known level name.
    """
    level = getattr(logging, log_level.upper(), None)
    if not isinstance(level, int):
        raise ValueError(f"Unknown log level: {log_level}")

    logger = logging.getLogger(ROOT_LOGGER_NAME)
    logger.setLevel(min(level, logging.DEBUG) if log_file else level)

    for handler in list(logger.handlers):
        handler.close()
    logger.handlers = []

    handlers = []
    if log_file:
        handlers.append(_file_handler(Path(log_file), max_bytes, backup_count))
    if console_output:
        handlers.append(_console_handler(level))

    run_filter = RunContextFilter()
    for handler in handlers:
        handler.addFilter(run_filter)
        logger.addHandler(handler)

    if not logger.handlers:
        logger.addHandler(logging.NullHandler())

    return logger


def get_logger(name: str = ROOT_LOGGER_NAME) -> logging.Logger:
    """Logger for a module (usually __name__)."""
    return logging.getLogger(name)
