"""Shared logging configuration."""
import logging
import os
from logging import Logger

_LOG_FORMAT = "%(asctime)s | %(levelname)s | %(name)s | %(message)s"
logging.basicConfig(
    level=os.getenv("NOISY_CP_LOG_LEVEL", "INFO").upper(),
    format=_LOG_FORMAT,
)


def get_logger(name: str) -> Logger:
    return logging.getLogger(name)
