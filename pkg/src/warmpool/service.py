"""Continuous recommendation loop: recommendation file, metrics, fault tolerance.

Each cycle reads the demand trace, backtests the previous recommendation on
the demand observed since it was issued, optionally retunes alpha_prime, runs
the pipeline and atomically replaces the recommendation file. A failed cycle
leaves the previous file in place; after enough consecutive failures a
constant default schedule is written instead.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .autotuner import TunerState, load_state, save_state, tune_step
from .pipeline import PipelineConfig, Recommendation, recommend
from .schedule import PoolSchedule
from .simulator import SimulatorConfig, simulate
from .trace import DemandTrace, read_trace

log = logging.getLogger(__name__)

RECOMMENDATION_VERSION = 1


@dataclass(frozen=True)
class ServiceConfig:
    trace_path: Path
    recommendation_path: Path
    metrics_path: Path
    tuner_state_path: Path | None = None
    run_interval_seconds: int = 1800
    recommendation_horizon_intervals: int = 120
    interval_seconds: int = 30
    default_pool_size: int = 0
    max_consecutive_failures_before_default: int = 2
    target_wait_seconds: float | None = None
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)

    def __post_init__(self):
        if self.run_interval_seconds <= 0 or self.recommendation_horizon_intervals <= 0:
            raise ValueError("run interval and horizon must be positive")
        if self.run_interval_seconds >= self.recommendation_horizon_intervals * self.interval_seconds:
            raise ValueError("run interval must be shorter than the recommendation horizon")
        if self.default_pool_size < 0 or self.max_consecutive_failures_before_default < 1:
            raise ValueError("invalid fallback settings")
        if self.pipeline.horizon_intervals != self.recommendation_horizon_intervals:
            object.__setattr__(
                self, "pipeline", replace(self.pipeline, horizon_intervals=self.recommendation_horizon_intervals)
            )


@dataclass
class MetricsRecord:
    timestamp: float
    status: str  # succeeded | failed
    avg_idle_time: float = 0.0
    recommended_pool_size: int = 0
    demand_request_rate: float = 0.0
    pool_hit_count: int = 0
    pool_miss_count: int = 0
    hit_rate: float | None = None  # None until a previous recommendation can be backtested
    latency_ms: float = 0.0
    source_mode: str = ""
    alpha_prime: float | None = None
    error: str | None = None


# ---------------------------------------------------------------------------
# recommendation file
# ---------------------------------------------------------------------------


def recommendation_document(
    schedule: PoolSchedule, generated_at: int, alpha_prime: float, source_mode: str
) -> dict:
    if not schedule.is_integral():
        raise ValueError("recommendations carry integer pool sizes only")
    S = schedule.block_length
    return {
        "version": RECOMMENDATION_VERSION,
        "generated_at": int(generated_at),
        "interval_seconds": schedule.interval_seconds,
        "horizon_intervals": schedule.horizon,
        "alpha_prime": float(alpha_prime),
        "source_mode": source_mode,
        "schedule": [
            {"block_start_interval": int(k), "pool_size": int(schedule.values[k])} for k in range(0, schedule.horizon, S)
        ],
    }


def write_json_atomic(path: str | Path, doc: dict) -> None:
    """Write to a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w") as fh:
            json.dump(doc, fh, indent=1)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_recommendation(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != RECOMMENDATION_VERSION:
        raise ValueError(f"unsupported recommendation version {doc.get('version')!r}")
    return doc


def schedule_values(doc: dict) -> np.ndarray:
    """Per-interval pool sizes of a recommendation document."""
    H = doc["horizon_intervals"]
    out = np.empty(H, dtype=np.int64)
    blocks = doc["schedule"]
    for i, b in enumerate(blocks):
        stop = blocks[i + 1]["block_start_interval"] if i + 1 < len(blocks) else H
        out[b["block_start_interval"] : stop] = b["pool_size"]
    return out


def active_pool_size(doc: dict, now: float) -> int | None:
    """Pool size the recommendation prescribes at ``now``; None once it has expired."""
    k = int((now - doc["generated_at"]) // doc["interval_seconds"])
    if k < 0 or k >= doc["horizon_intervals"]:
        return None
    return int(schedule_values(doc)[k])


def default_document(cfg: ServiceConfig, now: float) -> dict:
    sched = PoolSchedule.constant(cfg.default_pool_size, cfg.recommendation_horizon_intervals,
                                  interval_seconds=cfg.interval_seconds)
    return recommendation_document(sched, int(now), cfg.pipeline.optimizer.alpha_prime, "fallback_default")


# ---------------------------------------------------------------------------
# loop
# ---------------------------------------------------------------------------


def backtest(doc: dict, trace: DemandTrace, tau_intervals: int):
    """Simulate a previous recommendation on the demand observed since it was issued."""
    if doc["interval_seconds"] != trace.interval_seconds:
        return None
    k0 = (doc["generated_at"] - trace.start_time) // trace.interval_seconds
    if k0 < 0:
        return None
    n = min(doc["horizon_intervals"], trace.horizon - k0)
    if n < 1:
        return None
    sched = PoolSchedule(schedule_values(doc)[:n], interval_seconds=trace.interval_seconds)
    return simulate(trace.window(k0, k0 + n), sched, SimulatorConfig(tau_intervals=tau_intervals))


def append_metrics(path: str | Path, rec: MetricsRecord) -> None:
    # one write() per line keeps appends line-atomic for concurrent readers
    with open(path, "a") as fh:
        fh.write(json.dumps(asdict(rec)) + "\n")


def run_cycle(
    cfg: ServiceConfig,
    now: float,
    tuner: TunerState | None,
    recommender: Callable[[DemandTrace, PipelineConfig], Recommendation] = recommend,
    reader: Callable[[Path], DemandTrace] = read_trace,
) -> tuple[MetricsRecord, TunerState | None]:
    """One successful-path cycle; raises on any failure."""
    t0 = time.perf_counter()
    trace = reader(cfg.trace_path)
    prev = None
    if Path(cfg.recommendation_path).exists():
        try:
            prev = read_recommendation(cfg.recommendation_path)
        except (ValueError, KeyError):
            prev = None
    tau = cfg.pipeline.optimizer.tau_intervals
    report = backtest(prev, trace, tau) if prev else None
    if tuner is not None and report is not None and report.total_requests:
        tuner = tune_step(tuner, prev["alpha_prime"], report.average_wait() * trace.interval_seconds)
    alpha = tuner.current_alpha if tuner is not None else cfg.pipeline.optimizer.alpha_prime
    rec = recommender(trace, cfg.pipeline.with_alpha(alpha))
    doc = recommendation_document(rec.schedule, rec.generated_at, alpha, rec.source_mode)
    write_json_atomic(cfg.recommendation_path, doc)
    recent = trace.tail(cfg.recommendation_horizon_intervals)
    m = MetricsRecord(
        timestamp=now,
        status="succeeded",
        recommended_pool_size=int(rec.schedule.values[0]),
        demand_request_rate=float(recent.counts.sum()) / (recent.horizon * recent.interval_seconds),
        latency_ms=(time.perf_counter() - t0) * 1000.0,
        source_mode=rec.source_mode + ("/degraded" if rec.degraded else ""),
        alpha_prime=alpha,
    )
    if report is not None:
        m.avg_idle_time = report.total_idle_intervals * trace.interval_seconds / report.curves.D.size
        m.pool_hit_count = report.hit_count
        m.pool_miss_count = report.miss_count
        m.hit_rate = report.hit_rate
    return m, tuner


def run_service(
    cfg: ServiceConfig,
    clock: Callable[[], float] = time.time,
    sleep: Callable[[float], None] = time.sleep,
    recommender: Callable[[DemandTrace, PipelineConfig], Recommendation] = recommend,
    reader: Callable[[Path], DemandTrace] = read_trace,
    max_cycles: int | None = None,
) -> int:
    """Run the loop; returns the number of completed cycles (only when ``max_cycles`` is set)."""
    for p in (cfg.recommendation_path, cfg.metrics_path):
        if not Path(p).parent.is_dir():
            raise ValueError(f"output directory for {p} does not exist")
    tuner = None
    if cfg.target_wait_seconds is not None:
        sp = cfg.tuner_state_path
        if sp is not None and Path(sp).exists():
            tuner = load_state(sp)
            tuner = replace(tuner, target_wait=cfg.target_wait_seconds)
        else:
            tuner = TunerState(cfg.target_wait_seconds, cfg.pipeline.optimizer.alpha_prime)
    failures = 0
    cycles = 0
    while max_cycles is None or cycles < max_cycles:
        started = clock()
        try:
            m, tuner = run_cycle(cfg, started, tuner, recommender, reader)
            failures = 0
            if tuner is not None and cfg.tuner_state_path is not None:
                save_state(tuner, cfg.tuner_state_path)
        except Exception as exc:  # a cycle must never take the loop down
            failures += 1
            log.warning("cycle failed (%d consecutive): %s", failures, exc)
            m = MetricsRecord(timestamp=started, status="failed", error=f"{type(exc).__name__}: {exc}")
            if failures >= cfg.max_consecutive_failures_before_default:
                try:
                    write_json_atomic(cfg.recommendation_path, default_document(cfg, started))
                    m.source_mode = "fallback_default"
                    m.recommended_pool_size = cfg.default_pool_size
                except OSError as werr:
                    log.error("could not write default recommendation: %s", werr)
        try:
            append_metrics(cfg.metrics_path, m)
        except OSError as merr:
            log.error("could not append metrics: %s", merr)
        cycles += 1
        if max_cycles is not None and cycles >= max_cycles:
            break
        sleep(max(0.0, cfg.run_interval_seconds - (clock() - started)))
    return cycles
