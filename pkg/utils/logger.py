import logging
import os
from typing import Optional

LOG_FORMAT = "%(asctime)s %(levelname)-7s [%(name)s] %(message)s"


def setup_logging(level: Optional[str] = None) -> None:
    """
    Configure the root logger once per process.

    Args:
        level: Level name; falls back to GSOT_LOG_LEVEL, then INFO
    """
    name = (level or os.getenv("GSOT_LOG_LEVEL") or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown log level {name!r}")
    logging.basicConfig(level=numeric, format=LOG_FORMAT, force=True)
