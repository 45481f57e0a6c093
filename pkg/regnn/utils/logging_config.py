"""
Logging setup.
JSON records via python-json-logger for machine consumption, plain text for terminals.
"""

import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

from regnn.config import settings


TEXT_FORMAT = "%(asctime)s %(levelname)-8s %(name)s: %(message)s"
JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None) -> None:
    """
    Install a single stderr handler on the root logger.

    Args:
        level: Log level name; defaults to settings.LOG_LEVEL
        fmt: "json" or "text"; defaults to settings.LOG_FORMAT
    """
    level = (level or settings.LOG_LEVEL).upper()
    fmt = fmt or settings.LOG_FORMAT

    handler = logging.StreamHandler(sys.stderr)
    if fmt == "json":
        handler.setFormatter(
            jsonlogger.JsonFormatter(
                JSON_FORMAT,
                rename_fields={"asctime": "timestamp", "levelname": "level"},
            )
        )
    else:
        handler.setFormatter(logging.Formatter(TEXT_FORMAT))

    root = logging.getLogger()
    for existing in list(root.handlers):
        root.removeHandler(existing)
    root.addHandler(handler)
    root.setLevel(level)
