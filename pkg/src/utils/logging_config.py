"""
Beacon Privacy Defense - Logging Configuration.

Centralized loguru configuration: a stderr sink (coloured text or JSON)
and optional rotating JSON log files.
"""

import hashlib
import os
import sys
from pathlib import Path
from typing import Optional

from loguru import logger


# ==========================================
# Environment Configuration
# ==========================================
LOG_LEVEL = os.getenv("BEACON_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = os.getenv("BEACON_LOG_FORMAT", "text")
LOG_DIR = Path(os.getenv("BEACON_LOG_DIR", "logs"))
LOG_ROTATION = os.getenv("BEACON_LOG_ROTATION", "100 MB")
LOG_RETENTION = os.getenv("BEACON_LOG_RETENTION", "30 days")


# ==========================================
# Log Formats
# ==========================================

TEXT_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss.SSS}</green> | "
    "<level>{level: <8}</level> | "
    "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
    "<level>{message}</level>"
)


# ==========================================
# Logging Configuration
# ==========================================

def setup_logging(
    level: Optional[str] = None,
    log_format: Optional[str] = None,
    log_dir: Optional[Path] = None,
    enable_file_logging: bool = False,
    rotation: Optional[str] = None,
    retention: Optional[str] = None,
) -> None:
    """
    Configure the global loguru logger.

    Logs go to stderr so that CLI outputs on stdout stay machine-readable.

    Args:
        level: Log level (DEBUG, INFO, WARNING, ERROR, CRITICAL).
        log_format: "json" or "text".
        log_dir: Directory for beacon.log and errors.log.
        enable_file_logging: Whether to add the rotating JSON file sinks.
        rotation: File rotation trigger.
        retention: File retention duration.

    Example:
        >>> setup_logging(level="DEBUG", log_format="json")
        >>> logger.info("defense finished")
    """
    level = (level or LOG_LEVEL).upper()
    log_format = (log_format or LOG_FORMAT).lower()
    log_dir = Path(log_dir or LOG_DIR)
    rotation = rotation or LOG_ROTATION
    retention = retention or LOG_RETENTION

    logger.remove()
    as_json = log_format == "json"
    logger.add(
        sys.stderr,
        format=TEXT_FORMAT if not as_json else "{message}",
        level=level,
        colorize=not as_json,
        serialize=as_json,
        backtrace=True,
        diagnose=False,
    )

    if enable_file_logging:
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_dir / "beacon.log",
            level=level,
            rotation=rotation,
            retention=retention,
            serialize=True,
            enqueue=True,
        )
        logger.add(
            log_dir / "errors.log",
            level="ERROR",
            rotation=rotation,
            retention=retention,
            serialize=True,
            enqueue=True,
        )

    logger.debug(f"Logging configured: level={level}, format={log_format}, file_logging={enable_file_logging}")


# ==========================================
# Context Processors
# ==========================================

def token_digest(token: str) -> str:
    """Short, non-reversible label for a session token."""
    return hashlib.sha256(token.encode("utf-8")).hexdigest()[:10]


def add_session_context(token: Optional[str], peer: Optional[str] = None):
    """
    Tag subsequent log lines with the session (token digest, never the token).

    Returns:
        Context manager for use with 'with' statement.

    Example:
        >>> with add_session_context("alice"):
        ...     logger.info("query answered")
    """
    context = {"session": token_digest(token) if token else "anonymous"}
    if peer:
        context["peer"] = peer
    return logger.contextualize(**context)


def add_run_context(run_id: str, command: str):
    """
    Tag subsequent log lines with a CLI run id and command.

    Returns:
        Context manager for use with 'with' statement.
    """
    return logger.contextualize(run_id=run_id, command=command)
