"""
Logging setup - bracketed level tags on stderr
"""
import logging
import os
import sys

_FORMAT = "[%(levelname)s] %(message)s"
_configured = False


def configure_logging(level: str = None) -> None:
    """Install the stderr handler once; later calls only change the level"""
    global _configured
    level = (level or os.getenv("CRASHCAST_LOG_LEVEL", "INFO")).upper()
    root = logging.getLogger("app")
    if not _configured:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(_FORMAT))
        root.addHandler(handler)
        root.propagate = False
        _configured = True
    root.setLevel(level)


def get_logger(name: str) -> logging.Logger:
    configure_logging()
    return logging.getLogger(name)
