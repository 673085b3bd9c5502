import logging
import os
import sys
from datetime import datetime
from logging.handlers import RotatingFileHandler
from typing import Optional

from from_root import from_root

from sleepevents.config import Config

# Constants for log configuration
LOG_DIR = 'logs'
LOG_FILE = f"{datetime.now().strftime('%m_%d_%Y_%H_%M_%S')}.log"
MAX_LOG_SIZE = 5 * 1024 * 1024  # 5 MB
BACKUP_COUNT = 3  # Number of backup log files to keep
LOG_FORMAT = "[ %(asctime)s ] %(name)s - %(levelname)s - %(message)s"


def log_file_path(log_dir: Optional[str] = None) -> str:
    """Resolve the log file path, creating its directory."""
    directory = log_dir or Config.LOG_DIR or os.path.join(from_root(), LOG_DIR)
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, LOG_FILE)


def configure_logger(level: str = Config.LOG_LEVEL, log_dir: Optional[str] = None) -> logging.Logger:
    """
    Configures logging with a rotating file handler and a console handler.

    The file receives everything from DEBUG up; the console shows ``level``.
    Console output goes to stderr so command output on stdout stays
    machine-readable.
    """
    # Get the root logger
    logger = logging.getLogger()

    # Clear any existing handlers to avoid duplicates
    if logger.handlers:
        logger.handlers.clear()

    logger.setLevel(logging.DEBUG)

    formatter = logging.Formatter(LOG_FORMAT)

    # File handler with rotation
    file_handler = RotatingFileHandler(
        log_file_path(log_dir), maxBytes=MAX_LOG_SIZE, backupCount=BACKUP_COUNT, encoding='utf-8'
    )
    file_handler.setFormatter(formatter)
    file_handler.setLevel(logging.DEBUG)

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler.setLevel(getattr(logging, str(level).upper(), logging.INFO))

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    return logger
