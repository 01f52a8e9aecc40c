"""
Beacon Privacy Defense - Parallel Sweep Executor.

Runs sweep points on a thread pool and returns their results in
submission order, whatever order they complete in.
"""

import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Optional, Sequence, TypeVar

import psutil
from loguru import logger


P = TypeVar("P")
R = TypeVar("R")


class SweepExecutor:
    """
    Thread-pool executor for independent sweep points.

    Example:
        >>> executor = SweepExecutor(max_workers=4)
        >>> executor.execute([-2.0, -1.0, 0.0], lambda theta: theta * 2)
        [-4.0, -2.0, 0.0]
    """

    def __init__(
        self,
        max_workers: int = 1,
        timeout: Optional[float] = None,
        memory_threshold_gb: float = 0.5,
    ):
        """
        Initialize sweep executor.

        Args:
            max_workers: Worker threads (1 runs inline).
            timeout: Global timeout in seconds (None: no timeout).
            memory_threshold_gb: Warn when available memory is below this.
        """
        self.max_workers = max_workers
        self.timeout = timeout
        self.memory_threshold_gb = memory_threshold_gb

    def execute(self, points: Sequence[P], fn: Callable[[P], R], label: str = "sweep") -> List[R]:
        """
        Evaluate fn on every point.

        Args:
            points: Sweep points.
            fn: Work for one point.
            label: Name used in log lines.

        Returns:
            list: fn(point) per point, in the order of points.

        Raises:
            Exception: The first point failure, after all points settle.
        """
        if not points:
            logger.warning(f"{label}: no points to run")
            return []

        self._check_memory()
        start = time.time()
        logger.info(f"{label}: {len(points)} points (max_workers={self.max_workers})")

        if self.max_workers <= 1:
            results = [self._run_point(fn, point, k, label) for k, point in enumerate(points)]
        else:
            slots: Dict[int, R] = {}
            failure: Optional[BaseException] = None
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                future_to_index = {
                    pool.submit(self._run_point, fn, point, k, label): k for k, point in enumerate(points)
                }
                for future in as_completed(future_to_index, timeout=self.timeout):
                    k = future_to_index[future]
                    try:
                        slots[k] = future.result()
                    except Exception as e:
                        failure = failure or e
            if failure is not None:
                raise failure
            results = [slots[k] for k in range(len(points))]

        logger.info(f"{label}: completed {len(results)} points in {time.time() - start:.2f}s")
        return results

    @staticmethod
    def _run_point(fn: Callable[[P], R], point: P, index: int, label: str) -> R:
        try:
            result = fn(point)
        except Exception as e:
            logger.error(f"{label}: point {index} ({point!r}) failed: {e}")
            raise
        logger.debug(f"{label}: point {index} ({point!r}) done")
        return result

    def _check_memory(self) -> bool:
        """
        Check available memory before a sweep.

        Returns:
            bool: True if available memory is above the threshold.
        """
        try:
            available_gb = psutil.virtual_memory().available / (1024 ** 3)
        except Exception as e:
            logger.warning(f"Memory check failed: {e}")
            return True
        if available_gb < self.memory_threshold_gb:
            logger.warning(
                f"Low memory: {available_gb:.2f} GB available (threshold: {self.memory_threshold_gb} GB)"
            )
            return False
        return True
