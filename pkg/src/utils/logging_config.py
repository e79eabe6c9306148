import os
import sys
from loguru import logger

from src.config import settings

CONSOLE_FORMAT = (
    "<green>{time:HH:mm:ss.SSS}</green> | <level>{level: <8}</level> | "
    "<magenta>{extra[run]}</magenta> | <cyan>{name}</cyan>:<cyan>{line}</cyan> - <level>{message}</level>"
)
FILE_FORMAT = (
    "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {thread.name} | {extra[run]} | "
    "{name}:{function}:{line} - {message}"
)


def setup_logging(level=None, log_file=None):
    """
    Configure the loguru sinks.

    Records carry the instance being solved in extra['run'] ('-' outside a run),
    so concurrent batch runs can be told apart.

    Args:
        level: Minimum level; defaults to LOG_LEVEL
        log_file: File sink path; defaults to LOG_FILE, empty disables it
    """
    level = (level or settings.LOG_LEVEL).upper()
    log_file = settings.LOG_FILE if log_file is None else log_file

    logger.remove()
    logger.configure(extra={"run": "-"})
    logger.add(sys.stderr, format=CONSOLE_FORMAT, level=level, colorize=True)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        logger.add(
            log_file,
            format=FILE_FORMAT,
            level=level,
            rotation="10 MB",
            compression="zip",
            retention="30 days",
            backtrace=True,
            diagnose=True,
            enqueue=True,
        )

    logger.debug(f"Logging at {level}" + (f" to {log_file}" if log_file else ""))


def run_context(instance):
    """Tag every record logged inside the block, in this thread, with the instance name."""
    return logger.contextualize(run=instance)
