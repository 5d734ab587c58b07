"""Process-level settings read from the environment (and an optional .env file)."""

import logging
import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

DEFAULT_OUTPUT_DIR = "results"


def output_dir() -> Path:
    """Default directory for CSV outputs when the caller gives none."""
    return Path(os.getenv("DDAM_OUTPUT_DIR", DEFAULT_OUTPUT_DIR))


def log_level() -> int:
    name = os.getenv("DDAM_LOG_LEVEL", "INFO").upper()
    return getattr(logging, "getLevelNamesMapping", lambda: dict(logging._nameToLevel))().get(name, logging.INFO)


def default_workers() -> int:
    """Worker processes for the sweep pool; 1 runs sweep points in-process."""
    try:
        return max(1, int(os.getenv("DDAM_WORKERS", "1")))
    except ValueError:
        return 1


def configure_logging(verbose: bool = False) -> None:
    """Configure the root handler. Only entry points call this."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else log_level(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
