"""
Logging utilities with colored output.
"""

import logging
import sys
from typing import Optional, Union

try:
    from colorama import Fore, Style, init as colorama_init
    colorama_init()
    LEVEL_COLORS = {
        logging.DEBUG: Fore.CYAN,
        logging.INFO: Fore.GREEN,
        logging.WARNING: Fore.YELLOW,
        logging.ERROR: Fore.RED,
        logging.CRITICAL: Fore.RED + Style.BRIGHT,
    }
    RESET = Style.RESET_ALL
except ImportError:
    LEVEL_COLORS = {}
    RESET = ""


ROOT_LOGGER = "rss_workbench"
CONSOLE_FORMAT = "%(levelname)s: %(message)s"
FILE_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class ColoredFormatter(logging.Formatter):
    """Console formatter that colors each line by its level."""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        color = LEVEL_COLORS.get(record.levelno)
        return f"{color}{line}{RESET}" if color else line


def _resolve_level(level: Union[int, str]) -> int:
    if isinstance(level, int):
        return level
    resolved = logging.getLevelName(level.upper())
    if not isinstance(resolved, int):
        raise ValueError(f"Unknown log level '{level}'")
    return resolved


def setup_logger(name: str = ROOT_LOGGER,
                 level: Union[int, str] = logging.INFO,
                 log_file: Optional[str] = None) -> logging.Logger:
    """
    Configure the workbench logger: colored console plus optional plain file.

    Args:
        name: Logger name
        level: Logging level, as an int or a level name such as "DEBUG"
        log_file: Optional file path for log output

    Returns:
        Configured logger instance
    """
    level = _resolve_level(level)
    logger = logging.getLogger(name)
    logger.setLevel(level)
    logger.propagate = False
    logger.handlers.clear()

    console = logging.StreamHandler(sys.stdout)
    console.setFormatter(ColoredFormatter(CONSOLE_FORMAT))
    logger.addHandler(console)

    if log_file:
        handler = logging.FileHandler(log_file)
        handler.setFormatter(logging.Formatter(FILE_FORMAT))
        logger.addHandler(handler)

    return logger


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get the workbench logger or one of its children.

    Child loggers ("trainer", "adapt", ...) carry no handlers of their own
    and propagate to the workbench logger. Asking for the workbench logger
    itself sets it up if no entry script has done so.
    """
    root = logging.getLogger(ROOT_LOGGER)
    if name is None or name == ROOT_LOGGER:
        if not root.handlers:
            setup_logger(ROOT_LOGGER)
        return root
    return root.getChild(name)
