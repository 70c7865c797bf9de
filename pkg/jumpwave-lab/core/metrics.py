import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, Iterator, Optional


@dataclass
class MetricsSnapshot:
    time_steps: int
    operator_applications: int
    cg_iterations: int
    eigensolves: int
    cache_hits: int
    cache_misses: int
    phase_seconds: Dict[str, float] = field(default_factory=dict)

    @property
    def cache_hit_rate(self) -> float:
        denom = self.cache_hits + self.cache_misses
        return (self.cache_hits / denom) if denom else 0.0

    def as_dict(self) -> dict:
        return {
            "time_steps": self.time_steps,
            "operator_applications": self.operator_applications,
            "cg_iterations": self.cg_iterations,
            "eigensolves": self.eigensolves,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "cache_hit_rate": self.cache_hit_rate,
            "phase_seconds": dict(sorted(self.phase_seconds.items())),
        }


class RunMetrics:
    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._time_steps = 0
        self._operator_applications = 0
        self._cg_iterations = 0
        self._eigensolves = 0
        self._cache_hits = 0
        self._cache_misses = 0
        self._phase_seconds: Dict[str, float] = {}

    def record_steps(self, count: int) -> None:
        if count <= 0:
            return
        with self._lock:
            self._time_steps += count
            self._operator_applications += count

    def record_applications(self, count: int) -> None:
        with self._lock:
            self._operator_applications += count

    def record_cg(self, iterations: int) -> None:
        with self._lock:
            self._cg_iterations += iterations

    def record_eigensolve(self) -> None:
        with self._lock:
            self._eigensolves += 1

    def record_cache(self, hit: bool) -> None:
        with self._lock:
            if hit:
                self._cache_hits += 1
            else:
                self._cache_misses += 1

    def record_phase(self, name: str, seconds: float) -> None:
        with self._lock:
            self._phase_seconds[name] = self._phase_seconds.get(name, 0.0) + seconds

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.record_phase(name, time.perf_counter() - started)

    def snapshot(self) -> MetricsSnapshot:
        with self._lock:
            return MetricsSnapshot(
                time_steps=self._time_steps,
                operator_applications=self._operator_applications,
                cg_iterations=self._cg_iterations,
                eigensolves=self._eigensolves,
                cache_hits=self._cache_hits,
                cache_misses=self._cache_misses,
                phase_seconds=dict(self._phase_seconds),
            )


_metrics: Optional[RunMetrics] = None


def init_metrics() -> RunMetrics:
    global _metrics
    _metrics = RunMetrics()
    return _metrics


def get_metrics() -> RunMetrics:
    if _metrics is None:
        return init_metrics()
    return _metrics
