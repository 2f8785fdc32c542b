"""Logging setup for hparam_mapper.

Every module logs through a child of the ``hparam_mapper`` logger obtained
with :func:`get_logger`. Console output goes to stderr so that command
results printed on stdout stay machine readable. DEBUG carries per-epoch and
per-probe detail, INFO stage boundaries and summary numbers, WARNING
recoverable anomalies.
"""

import logging
import os
import sys
from pathlib import Path
from typing import Literal

DEFAULT_FORMAT: str = "%(asctime)s %(levelname)-8s %(name)s: %(message)s"

LEVEL_ENV_VAR = "HPARAM_MAPPER_LOG_LEVEL"
FILE_ENV_VAR = "HPARAM_MAPPER_LOG_FILE"

# Package logger
logger: logging.Logger = logging.getLogger("hparam_mapper")

LogLevel = int | str | Literal["debug", "info", "warning", "error", "critical"]


def _resolve_level(level: LogLevel) -> int:
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(level.upper())
    return resolved if isinstance(resolved, int) else logging.INFO


def _file_handler(log_file: str | Path, formatter: logging.Formatter) -> logging.FileHandler:
    """Handler for ``log_file``, which must resolve inside the working directory."""
    path = Path(log_file).expanduser().resolve()
    if not path.is_relative_to(Path.cwd().resolve()):
        raise ValueError(f"log file {path} is outside the current working directory")
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path)
    handler.setFormatter(formatter)
    return handler


def configure_logging(
    level: LogLevel = logging.INFO,
    format_str: str | None = None,
    log_file: str | Path | None = None,
    propagate: bool = False,
) -> None:
    """Replace the package logger's handlers.

    Args:
        level: Level as an int or a name such as ``"debug"``; unknown names
            fall back to INFO.
        format_str: Record format, :data:`DEFAULT_FORMAT` when omitted.
        log_file: Optional file that receives the same records as the
            console. A path outside the working directory is refused with a
            warning and the console handler is kept.
        propagate: Whether records also reach the root logger.

    Examples:
        >>> configure_logging(level="debug")
        >>> logger.level == logging.DEBUG
        True
    """
    formatter = logging.Formatter(format_str or DEFAULT_FORMAT)

    logger.handlers.clear()
    logger.setLevel(_resolve_level(level))
    logger.propagate = propagate

    console = logging.StreamHandler(sys.stderr)
    console.setFormatter(formatter)
    logger.addHandler(console)

    if log_file:
        try:
            logger.addHandler(_file_handler(log_file, formatter))
        except (OSError, ValueError) as e:
            logger.warning(f"not logging to file: {e}")


def get_logger(name: str) -> logging.Logger:
    """Logger for one module of the package.

    >>> get_logger("lopt").name
    'hparam_mapper.lopt'
    """
    return logging.getLogger(f"{logger.name}.{name}")


def _configure_from_env() -> None:
    env_level = os.environ.get(LEVEL_ENV_VAR)
    env_file = os.environ.get(FILE_ENV_VAR)
    if env_level or env_file:
        configure_logging(level=env_level or logging.INFO, log_file=env_file)


configure_logging()
_configure_from_env()
