import logging
import time
from contextlib import contextmanager
from typing import Iterator

import colorlog

__all__ = ["Stopwatch", "setup_logger", "timed"]


_PKG_NAME = __name__.split(".")[0]
_WARNINGS_LOGGER = "py.warnings"
_FORMAT = (
    "[%(asctime)s] [%(processName)s] [%(name)s] "
    "[%(log_color)s%(levelname)s%(reset)s] %(message)s"
)


class _LogFilter(logging.Filter):
    __slots__ = ("_verbose",)

    def __init__(self, verbose: bool) -> None:
        super().__init__()

        self._verbose = verbose

    def filter(self, record: logging.LogRecord) -> bool:
        # numpy/scipy runtime warnings surface even when not verbose
        if record.name == _WARNINGS_LOGGER:
            return True

        return self._verbose or record.name.startswith(_PKG_NAME)


def setup_logger(verbose: bool, debug: bool) -> None:
    level = logging.DEBUG if debug else logging.INFO

    handler = colorlog.StreamHandler()
    handler.addFilter(_LogFilter(verbose))
    handler.setFormatter(colorlog.ColoredFormatter(_FORMAT))

    logging.basicConfig(
        level=level,
        handlers=(handler,),
        force=True,
    )
    logging.captureWarnings(True)


class Stopwatch:
    __slots__ = ("_start", "elapsed")

    def __init__(self) -> None:
        self._start = time.perf_counter()
        self.elapsed = 0.0

    def stop(self) -> float:
        self.elapsed = time.perf_counter() - self._start

        return self.elapsed


@contextmanager
def timed(logger: logging.Logger, label: str) -> Iterator[Stopwatch]:
    watch = Stopwatch()
    try:
        yield watch
    finally:
        logger.debug("%s took %.3fs", label, watch.stop())
