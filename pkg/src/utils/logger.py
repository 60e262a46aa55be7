"""Logging utilities"""

import logging
import os
from typing import Optional

import config as env

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logger(name: str = "src", log_file: Optional[str] = None, level: Optional[str] = None) -> logging.Logger:
    """Console plus optional file logger for the `src` package tree.

    Level and file default to ZICP_LOG_LEVEL / ZICP_LOG_FILE. Calling again
    (every CLI run in one process does) only changes the level; the handlers
    of the first call stay in place.
    """
    level = (level or env.ZICP_LOG_LEVEL).upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ValueError(f"unknown log level {level!r}")

    logger = logging.getLogger(name)
    logger.setLevel(level)
    if logger.handlers:
        for handler in logger.handlers:
            handler.setLevel(level)
        return logger

    formatter = logging.Formatter(LOG_FORMAT)

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    console_handler.setLevel(level)
    logger.addHandler(console_handler)

    log_file = log_file or env.ZICP_LOG_FILE
    if log_file:
        os.makedirs(os.path.dirname(log_file) or ".", exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setFormatter(formatter)
        file_handler.setLevel(level)
        logger.addHandler(file_handler)

    return logger
