"""
Beacon Privacy Defense - Resource Usage Monitor.

Elapsed time and peak resident memory of a CLI run, for the run manifest.
"""

import time
from typing import Any, Dict, Optional

import psutil
from loguru import logger


class ResourceMonitor:
    """
    Track wall time and memory of a run.

    Example:
        >>> monitor = ResourceMonitor()
        >>> monitor.start()
        >>> # ... defend ...
        >>> monitor.stop()["peak_memory_mb"] > 0
        True
    """

    def __init__(self):
        """Initialize resource monitor."""
        self.process = psutil.Process()
        self.start_time: Optional[float] = None
        self.start_memory = 0.0
        self.peak_memory_mb = 0.0
        self.phases: Dict[str, float] = {}

    def _rss_mb(self) -> float:
        return self.process.memory_info().rss / (1024 ** 2)

    def start(self) -> None:
        """Record the baseline."""
        self.start_time = time.perf_counter()
        self.start_memory = self._rss_mb()
        self.peak_memory_mb = self.start_memory
        self.phases = {}
        logger.debug(f"Resource monitoring started: memory={self.start_memory:.1f}MB")

    def sample(self) -> float:
        """Current RSS in MB; updates the peak."""
        current = self._rss_mb()
        self.peak_memory_mb = max(self.peak_memory_mb, current)
        return current

    def mark(self, phase: str) -> None:
        """Record seconds elapsed since start under a phase name."""
        if self.start_time is None:
            return
        self.sample()
        self.phases[phase] = time.perf_counter() - self.start_time

    def stop(self) -> Dict[str, Any]:
        """
        Stop monitoring.

        Returns:
            dict: duration_seconds, start/end/peak memory in MB, phases.
        """
        if self.start_time is None:
            logger.warning("Monitor not started, returning empty stats")
            return {}
        end_memory = self.sample()
        stats = {
            "duration_seconds": time.perf_counter() - self.start_time,
            "start_memory_mb": self.start_memory,
            "end_memory_mb": end_memory,
            "peak_memory_mb": self.peak_memory_mb,
            "phases": dict(self.phases),
        }
        logger.debug(
            f"Resource monitoring stopped: duration={stats['duration_seconds']:.2f}s, "
            f"peak_memory={self.peak_memory_mb:.1f}MB"
        )
        return stats
