"""Logging configuration module.

This module centralises project-wide logging setup. Calling
:func:`setup_logging` once (the CLI does it at start-up) configures the root
logger with:
    • RotatingFileHandler → logs/rtinterp.log (size-based rotation)
    • StreamHandler       → console/stderr for interactive runs

Subsequent calls are no-ops thanks to an idempotent guard.  Library modules
never call it themselves; importing :mod:`rtinterp` leaves logging untouched.
"""
from __future__ import annotations

import logging
import os
from logging.handlers import RotatingFileHandler
from pathlib import Path

__all__ = ["setup_logging", "reset_logging"]

# Prevent double configuration if called multiple times
_CONFIGURED: bool = False
_HANDLERS: list[logging.Handler] = []


def setup_logging(
    *,
    log_file: str | os.PathLike[str] | None = "logs/rtinterp.log",
    max_bytes: int = 10 * 1024 * 1024,  # 10 MiB per file
    backup_count: int = 5,
    level: int | str = logging.INFO,
) -> None:
    """Configure the root logger with a rotating file + console handler.

    Parameters
    ----------
    log_file: path-like, str or None
        Destination path for the log file. Intermediate directories are
        created automatically.  ``None`` keeps console logging only.
    max_bytes: int
        Rotate the log file once it exceeds this many bytes.
    backup_count: int
        Number of rotated log files to keep (``rtinterp.log.1`` → ``.N``).
    level: int | str
        Minimum log level captured by the root logger.
    """

    global _CONFIGURED  # noqa: PLW0603 – module-level singleton guard

    if _CONFIGURED:
        return

    formatter = logging.Formatter(
        fmt="%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    if log_file is not None:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = RotatingFileHandler(
            filename=log_path,
            maxBytes=max_bytes,
            backupCount=backup_count,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        _HANDLERS.append(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    _HANDLERS.append(console_handler)

    root_logger = logging.getLogger()
    root_logger.setLevel(level.upper() if isinstance(level, str) else level)
    for handler in _HANDLERS:
        root_logger.addHandler(handler)

    _CONFIGURED = True


def reset_logging() -> None:
    """Detach and close the handlers installed by :func:`setup_logging` (tests)."""
    global _CONFIGURED  # noqa: PLW0603

    root_logger = logging.getLogger()
    while _HANDLERS:
        handler = _HANDLERS.pop()
        root_logger.removeHandler(handler)
        try:
            handler.close()
        except Exception:  # pragma: no cover – best-effort
            pass
    _CONFIGURED = False
