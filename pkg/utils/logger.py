"""
Logging Configuration for MFLDP
Log records go to stderr so stdout carries only command output (schema, check table)
"""
import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from typing import Optional

from config import Config

ROOT_NAME = "mfldp"
LOG_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s | %(message)s'


def _file_handler(formatter: logging.Formatter, level: int) -> Optional[logging.Handler]:
    if not Config.LOG_TO_FILE:
        return None
    os.makedirs(Config.LOG_DIR, exist_ok=True)
    handler = RotatingFileHandler(
        os.path.join(Config.LOG_DIR, f"{ROOT_NAME}.log"),
        maxBytes=10 * 1024 * 1024,
        backupCount=5,
        encoding="utf-8",
    )
    handler.setLevel(level)
    handler.setFormatter(formatter)
    return handler


def setup_logger(name: str = ROOT_NAME, level: int = Config.LOG_LEVEL) -> logging.Logger:
    """
    Root tool logger: stderr console plus an optional rotating run log
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False

    if logger.handlers:
        return logger

    formatter = logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%d %H:%M:%S')

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    try:
        handler = _file_handler(formatter, level)
        if handler is not None:
            logger.addHandler(handler)
    except OSError as e:
        logger.warning(f"⚠️ Could not open run log in {Config.LOG_DIR}: {e}")

    return logger


def get_logger(component: str) -> logging.Logger:
    """Child logger, e.g. mfldp.meanfield; shares the root handlers"""
    child = logging.getLogger(f"{ROOT_NAME}.{component}")
    child.propagate = True
    return child


logger = setup_logger()
