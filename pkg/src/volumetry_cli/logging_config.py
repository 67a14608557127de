import logging
import os
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from colorama import Fore, Style
from colorama import init as colorama_init

LOG_FILE_NAME = "volumetry.log"


class ConsoleNoiseFilter(logging.Filter):
    """Filter to keep library chatter off the console; the file log still has it."""

    def filter(self, record):
        msg = str(record.msg)
        # nibabel reports every header field it fixes up while loading
        if record.name.startswith("nibabel") and record.levelno < logging.WARNING:
            return False
        if record.name.startswith("nibabel") and "pixdim[0]" in msg:
            return False
        return True


class SubjectContextFilter(logging.Filter):
    """Adds ``subject`` to every record so per-subject messages line up in the file log."""

    def filter(self, record):
        if not hasattr(record, "subject"):
            record.subject = "-"
        return True


def setup_logging(level: str = "INFO", log_dir: str | Path = "logs") -> Path:
    # Force color if requested via environment variable (common in CI)
    force_color = os.getenv("FORCE_COLOR", "").lower() in ("1", "true")
    colorama_init(autoreset=True, strip=False if force_color else None)

    # Remove existing handlers to ensure our configuration takes precedence
    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
        handler.close()

    # Set root to DEBUG to capture all logs; handlers will filter as needed
    root.setLevel(logging.DEBUG)

    # Console Handler (Colored), at the configured level
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)
    console_handler.setFormatter(
        logging.Formatter(
            f"{Fore.CYAN}%(asctime)s{Style.RESET_ALL} | "
            f"{Fore.GREEN}%(levelname)s{Style.RESET_ALL}: "
            f"{Fore.YELLOW}%(name)s{Style.RESET_ALL} - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    )
    console_handler.addFilter(ConsoleNoiseFilter())
    root.addHandler(console_handler)

    # File Handler (Plain text, Rotating), always DEBUG
    log_dir = Path(log_dir)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / LOG_FILE_NAME
    file_handler = RotatingFileHandler(log_path, maxBytes=5 * 1024 * 1024, backupCount=5, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_handler.addFilter(SubjectContextFilter())
    file_handler.setFormatter(
        logging.Formatter(
            "%(asctime)s | %(levelname)s: %(name)s [%(subject)s] - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
    )
    root.addHandler(file_handler)
    return log_path


def get_logger(name: str):
    return logging.getLogger(name)
