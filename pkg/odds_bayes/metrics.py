"""
Metrics collection for the odds model pipeline.
Prometheus collectors are registered once; per-stage statistics are kept in thread-safe objects.
"""
import logging
import math
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, Iterator, Optional

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, generate_latest

log = logging.getLogger(__name__)


class PrometheusRegistry:
    """Singleton holding the pipeline collectors in a private registry."""
    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def initialize(self) -> None:
        if self._initialized:
            return
        with self._lock:
            if self._initialized:
                return
            self.registry = CollectorRegistry()
            self.stage_counter = Counter(
                "odds_stage_runs_total",
                "Pipeline stage executions",
                ["stage", "status"],
                registry=self.registry,
            )
            self.stage_histogram = Histogram(
                "odds_stage_seconds",
                "Pipeline stage duration in seconds",
                ["stage"],
                registry=self.registry,
            )
            self.inversion_failures = Counter(
                "odds_inversion_failures_total",
                "Implicit-rate inversions that failed",
                ["bookmaker"],
                registry=self.registry,
            )
            self.acceptance_gauge = Gauge(
                "odds_sampler_acceptance_rate",
                "Post burn-in acceptance rate per block",
                ["chain", "block"],
                registry=self.registry,
            )
            self.rhat_gauge = Gauge(
                "odds_max_rhat",
                "Largest split R-hat of the last fit",
                registry=self.registry,
            )
            self._initialized = True
            log.debug("prometheus.initialized")


_prometheus_registry = PrometheusRegistry()
_prometheus_registry.initialize()


@dataclass
class StageMetrics:
    """Thread-safe execution statistics for one pipeline stage."""
    stage: str
    _lock: threading.RLock = field(default_factory=threading.RLock, init=False, repr=False)
    run_count: int = 0
    failure_count: int = 0
    total_time: float = 0.0
    max_time: float = 0.0
    last_run: Optional[datetime] = None

    def record(self, success: bool, elapsed: float) -> None:
        with self._lock:
            if math.isnan(elapsed) or math.isinf(elapsed):
                log.warning("metrics.invalid_elapsed stage=%s elapsed=%s", self.stage, elapsed)
                elapsed = 0.0
            elapsed = max(0.0, float(elapsed))
            self.run_count += 1
            self.total_time += elapsed
            self.max_time = max(self.max_time, elapsed)
            self.last_run = datetime.now()
            if not success:
                self.failure_count += 1

    def get_stats(self) -> Dict[str, Any]:
        with self._lock:
            if self.run_count == 0:
                return {"stage": self.stage, "run_count": 0, "average_time": 0.0}
            return {
                "stage": self.stage,
                "run_count": self.run_count,
                "failure_count": self.failure_count,
                "average_time": round(self.total_time / self.run_count, 4),
                "max_time": round(self.max_time, 4),
                "last_run": self.last_run.isoformat() if self.last_run else None,
            }


class MetricsManager:
    """Process-wide metrics: stage timings, inversion failures, sampler health."""

    _instance = None
    _lock = threading.Lock()

    def __new__(cls):
        if cls._instance is None:
            with cls._lock:
                if cls._instance is None:
                    cls._instance = super().__new__(cls)
                    cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return
        self.stages: Dict[str, StageMetrics] = {}
        self.inversion_failures: Dict[str, int] = {}
        self.enabled = True
        self._stats_lock = threading.Lock()
        self.start_time = datetime.now()
        self._initialized = True

    @classmethod
    def get(cls) -> "MetricsManager":
        return cls()

    def reset(self) -> None:
        """Reset all metrics (for testing)."""
        with self._stats_lock:
            self.stages.clear()
            self.inversion_failures.clear()
            self.enabled = True

    def _stage(self, name: str) -> StageMetrics:
        with self._stats_lock:
            if name not in self.stages:
                self.stages[name] = StageMetrics(name)
            return self.stages[name]

    @contextmanager
    def track(self, stage: str) -> Iterator[None]:
        """Time a pipeline stage; failures are recorded and re-raised."""
        start = time.perf_counter()
        success = True
        try:
            yield
        except Exception:
            success = False
            raise
        finally:
            elapsed = time.perf_counter() - start
            self._stage(stage).record(success, elapsed)
            if self.enabled:
                _prometheus_registry.stage_counter.labels(
                    stage=stage, status="success" if success else "failure"
                ).inc()
                _prometheus_registry.stage_histogram.labels(stage=stage).observe(elapsed)
            log.info("metrics.stage stage=%s success=%s elapsed=%.3f", stage, success, elapsed)

    def record_inversion_failure(self, bookmaker: str) -> None:
        with self._stats_lock:
            self.inversion_failures[bookmaker] = self.inversion_failures.get(bookmaker, 0) + 1
        if self.enabled:
            _prometheus_registry.inversion_failures.labels(bookmaker=bookmaker).inc()

    def record_acceptance(self, chain: int, rates: Dict[str, float]) -> None:
        if not self.enabled:
            return
        for block, rate in rates.items():
            _prometheus_registry.acceptance_gauge.labels(chain=str(chain), block=block).set(rate)

    def record_max_rhat(self, value: float) -> None:
        if self.enabled and not math.isnan(value):
            _prometheus_registry.rhat_gauge.set(value)

    def get_all_stats(self) -> Dict[str, Any]:
        return {
            "stages": {name: m.get_stats() for name, m in self.stages.items()},
            "inversion_failures": dict(self.inversion_failures),
            "collection_start_time": self.start_time.isoformat(),
        }

    def get_prometheus_metrics(self) -> str:
        return generate_latest(_prometheus_registry.registry).decode("utf-8")

    def export(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.get_prometheus_metrics())
        log.info("metrics.exported path=%s", path)
