# metrics.py

"""
Thread-safe record of sweep cell outcomes for the end-of-sweep summary.
"""

from __future__ import annotations

import statistics
import threading
from dataclasses import dataclass, field
from typing import List, Optional


@dataclass
class CellSample:
    label: str
    start_time: float
    end_time: float
    success: bool
    error: Optional[str] = None

    @property
    def wall_ms(self) -> float:
        return (self.end_time - self.start_time) * 1000.0


@dataclass
class SweepMetrics:
    """Samples recorded by the sweep runner threads; readers get a consistent copy."""

    _samples: List[CellSample] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def record(self, sample: CellSample) -> None:
        with self._lock:
            self._samples.append(sample)

    @property
    def samples(self) -> List[CellSample]:
        with self._lock:
            return list(self._samples)

    @property
    def total(self) -> int:
        return len(self.samples)

    @property
    def failures(self) -> int:
        return len(self.failed_labels)

    @property
    def failed_labels(self) -> List[str]:
        return [s.label for s in self.samples if not s.success]

    @property
    def avg_wall_ms(self) -> Optional[float]:
        """Mean wall time of the cells that succeeded."""
        wall = [s.wall_ms for s in self.samples if s.success]
        return statistics.mean(wall) if wall else None

    def snapshot(self) -> dict:
        samples = self.samples
        failed = sum(1 for s in samples if not s.success)
        wall = [s.wall_ms for s in samples if s.success]
        return {
            "total": len(samples),
            "successes": len(samples) - failed,
            "failures": failed,
            "avg_wall_ms": statistics.mean(wall) if wall else None,
        }
