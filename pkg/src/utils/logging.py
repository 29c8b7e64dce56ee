"""
Logging helpers shared by every module

Diagnostics always go to stderr (plus an optional log file); command outputs
are written to files by the callers and never pass through logging.
"""
import logging
import sys
from typing import Any, MutableMapping, Optional, Tuple

from app_config import LOGGING_CONFIG

_configured = False


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """Configure the root logger once; later calls only adjust the level"""
    global _configured
    root = logging.getLogger()
    resolved = (level or LOGGING_CONFIG["level"]).upper()
    root.setLevel(resolved)
    if _configured:
        return

    formatter = logging.Formatter(LOGGING_CONFIG["format"], datefmt=LOGGING_CONFIG["date_format"])
    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(formatter)
    root.addHandler(stream_handler)

    if log_file:
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(formatter)
        root.addHandler(file_handler)

    for name in LOGGING_CONFIG["quiet_loggers"]:
        logging.getLogger(name).setLevel(logging.WARNING)
    _configured = True


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


class ContextualLogger(logging.LoggerAdapter):
    """Logger adapter that prefixes messages with bound key=value context"""

    def __init__(self, logger: logging.Logger, **context: Any):
        super().__init__(logger, context)

    def bind(self, **context: Any) -> "ContextualLogger":
        merged = {**self.extra, **context}
        return ContextualLogger(self.logger, **merged)

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> Tuple[Any, MutableMapping[str, Any]]:
        if not self.extra:
            return msg, kwargs
        prefix = " ".join(f"{key}={value}" for key, value in self.extra.items())
        return f"[{prefix}] {msg}", kwargs
