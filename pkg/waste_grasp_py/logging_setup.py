import logging
import time
from contextlib import contextmanager
from typing import Iterator

from rich.console import Console
from rich.logging import RichHandler

stderr_console = Console(stderr=True)


def configure_logging(verbose: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.INFO
    root = logging.getLogger("waste_grasp_py")
    root.setLevel(level)
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = RichHandler(console=stderr_console, show_path=False, rich_tracebacks=True)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root.addHandler(handler)
    root.propagate = False


@contextmanager
def stage_timer(logger: logging.Logger, stage: str, **fields: object) -> Iterator[None]:
    """Logs the wall-clock duration of a pipeline stage."""
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed_ms = (time.perf_counter() - start) * 1000.0
        extra = " ".join(f"{key}={value}" for key, value in fields.items())
        logger.info("stage=%s %s ms=%.1f", stage, extra, elapsed_ms)
