import os
import time
import logging
from contextlib import contextmanager
from typing import Any, Callable, Dict, Iterator, Optional
from functools import wraps

import numpy as np

from .exceptions import NumericError


# Configure logging
logging.basicConfig(
    level=getattr(logging, os.environ.get("LOG_LEVEL", "INFO").upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
)
logger = logging.getLogger(__name__)


def log_execution_time(func: Callable) -> Callable:
    """Decorator to log function execution time."""
    @wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        start_time = time.perf_counter()
        try:
            result = func(*args, **kwargs)
            duration = (time.perf_counter() - start_time) * 1000
            logger.info(f"{func.__qualname__} completed in {duration:.1f}ms")
            return result
        except Exception as e:
            duration = (time.perf_counter() - start_time) * 1000
            logger.error(f"{func.__qualname__} failed after {duration:.1f}ms: {e}")
            raise
    return wrapper


class PhaseTimer:
    """Accumulates wall-clock milliseconds per named phase."""

    def __init__(self):
        self.totals: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start_time = time.perf_counter()
        try:
            yield
        finally:
            elapsed = (time.perf_counter() - start_time) * 1000
            self.totals[name] = self.totals.get(name, 0.0) + elapsed

    @property
    def total_ms(self) -> float:
        return float(sum(self.totals.values()))


def ensure_finite(name: str, values: np.ndarray, timestep: Optional[int] = None) -> np.ndarray:
    """
    Check that an array holds only finite numbers.

    Args:
        name: Quantity name used in the error message
        values: Array to check
        timestep: Trajectory step the quantity belongs to, if any

    Returns:
        The unchanged array

    Raises:
        NumericError: If any entry is NaN or infinite
    """
    values = np.asarray(values)
    if not np.all(np.isfinite(values)):
        bad = int(np.size(values) - np.count_nonzero(np.isfinite(values)))
        raise NumericError(
            f"{name} has {bad} non-finite entries",
            timestep=timestep,
            diagnostics={"quantity": name, "non_finite": bad, "shape": tuple(values.shape)},
        )
    return values
