import logging
import traceback
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np

from app.core.config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent stream for cell `key` of the experiment seeded with `seed`"""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def _log_failure(index: int, exc: BaseException) -> None:
    """Log detailed information about cell failures"""
    logger.error(
        f"Cell {index} failed: {exc}\n"
        f"Traceback:\n{''.join(traceback.format_exception(type(exc), exc, exc.__traceback__))}"
    )


def run_cells(fn: Callable[[T], R], cells: Sequence[T], threads: int = 0) -> List[R]:
    """Run independent cells, returning results in submission order"""
    threads = threads or settings.DEFAULT_THREADS
    if threads <= 1 or len(cells) <= 1:
        results = []
        for index, cell in enumerate(cells):
            try:
                results.append(fn(cell))
            except Exception as exc:
                _log_failure(index, exc)
                raise
        return results

    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(fn, cell) for cell in cells]
        results = []
        for index, future in enumerate(futures):
            try:
                results.append(future.result())
            except Exception as exc:
                _log_failure(index, exc)
                raise
        return results
