"""Logger setup: one stderr handler, level from flag or the KSRS_LOG variable."""

import logging
import os
import sys

from config import DEFAULT_LOG_LEVEL, LOG_ENV_VAR, LOG_FORMAT, LOG_LEVELS

_ROOT = "ksrs"
_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def get_logger(name: str) -> logging.Logger:
    """Return the `ksrs.<name>` logger."""
    return logging.getLogger(f"{_ROOT}.{name}")


def resolve_level(level: str | None = None) -> str:
    """Pick the level name: explicit value, else env, else default."""
    chosen = level or os.environ.get(LOG_ENV_VAR) or DEFAULT_LOG_LEVEL
    chosen = chosen.strip().lower()
    if chosen not in LOG_LEVELS:
        logging.getLogger(_ROOT).warning(
            "Unknown log level %r, using %s", chosen, DEFAULT_LOG_LEVEL
        )
        return DEFAULT_LOG_LEVEL
    return chosen


def configure_logging(level: str | None = None) -> str:
    """Attach the stderr handler once and set the level. Returns the level name."""
    name = resolve_level(level)
    root = logging.getLogger(_ROOT)
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        root.propagate = False
    root.setLevel(_LEVELS[name])
    return name


def progress_enabled() -> bool:
    return logging.getLogger(_ROOT).getEffectiveLevel() <= logging.INFO


def debug_enabled() -> bool:
    return logging.getLogger(_ROOT).isEnabledFor(logging.DEBUG)
