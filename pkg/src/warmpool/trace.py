"""Demand traces: bucketing, max-filter smoothing, synthetic generation, CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np


class TraceFormatError(ValueError):
    """Raised when a trace file cannot be parsed; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _frozen_array(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DemandTrace:
    """Per-interval request counts.

    ``counts[k]`` is the number of requests arriving during
    ``[start_time + k*interval_seconds, start_time + (k+1)*interval_seconds)``.
    The cumulative demand curve is the prefix sum of ``counts``.
    """

    counts: np.ndarray
    interval_seconds: int = 30
    start_time: int = 0

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1 or counts.size < 1:
            raise ValueError("trace needs at least one interval")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and non-negative")
        if np.any(counts != np.round(counts)):
            raise ValueError("counts must be integers")
        if int(self.interval_seconds) <= 0:
            raise ValueError("interval_seconds must be positive")
        object.__setattr__(self, "counts", _frozen_array(counts, np.int64))
        object.__setattr__(self, "interval_seconds", int(self.interval_seconds))
        object.__setattr__(self, "start_time", int(self.start_time))

    def __len__(self) -> int:
        return int(self.counts.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, DemandTrace):
            return NotImplemented
        return (
            self.interval_seconds == other.interval_seconds
            and self.start_time == other.start_time
            and np.array_equal(self.counts, other.counts)
        )

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def end_time(self) -> int:
        return self.start_time + self.horizon * self.interval_seconds

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.counts)

    def times(self) -> np.ndarray:
        """Interval start times in epoch seconds."""
        return self.start_time + self.interval_seconds * np.arange(self.horizon, dtype=np.int64)

    def window(self, start: int, stop: int | None = None) -> "DemandTrace":
        """Sub-trace over interval indices ``[start, stop)`` (python slice semantics)."""
        idx = range(self.horizon)[start:stop]
        if len(idx) == 0:
            raise ValueError("empty trace window")
        return DemandTrace(
            self.counts[idx.start : idx.stop],
            self.interval_seconds,
            self.start_time + idx.start * self.interval_seconds,
        )

    def tail(self, n: int) -> "DemandTrace":
        return self.window(max(0, self.horizon - n))

    def extend(self, other: "DemandTrace") -> "DemandTrace":
        if other.interval_seconds != self.interval_seconds or other.start_time != self.end_time:
            raise ValueError("traces are not contiguous")
        return DemandTrace(
            np.concatenate([self.counts, other.counts]), self.interval_seconds, self.start_time
        )


def aggregate_events(
    event_times: Iterable[float], interval_seconds: int, start: float, end: float
) -> DemandTrace:
    """Bucket raw event timestamps into half-open intervals ``[start, end)``."""
    if interval_seconds <= 0:
        raise ValueError("interval_seconds must be positive")
    if start >= end:
        raise ValueError("start must be before end")
    n = int(math.ceil((end - start) / interval_seconds))
    times = np.asarray(list(event_times), dtype=float)
    times = times[(times >= start) & (times < end)]
    idx = np.floor((times - start) / interval_seconds).astype(np.int64)
    counts = np.bincount(idx, minlength=n)[:n]
    return DemandTrace(counts, interval_seconds, int(start))


@dataclass(frozen=True)
class SmoothingConfig:
    smoothing_factor: int = 0
    boundary_policy: Literal["clamp"] = "clamp"

    def __post_init__(self):
        if self.smoothing_factor < 0:
            raise ValueError("smoothing_factor must be >= 0")
        if self.boundary_policy != "clamp":
            raise ValueError(f"unknown boundary policy {self.boundary_policy!r}")

    @property
    def half_width(self) -> int:
        return filter_half_width(self.smoothing_factor)


def filter_half_width(smoothing_factor: int) -> int:
    # nearest integer to SF/2, halves rounded up
    return (int(smoothing_factor) + 1) // 2


def max_filter(series: Sequence[float], config: SmoothingConfig | int) -> np.ndarray:
    """Sliding maximum over ``[t - h, t + h]`` with the window clamped at both ends.

    ``h`` is SF/2 rounded half-up, so SF=1 and SF=2 both give a radius of one.
    """
    if isinstance(config, SmoothingConfig):
        h = config.half_width
    else:
        if config < 0:
            raise ValueError("smoothing factor must be >= 0")
        h = filter_half_width(config)
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("series must be a non-empty 1-D sequence")
    if h == 0:
        return x.copy()
    # edge padding reproduces window clamping: the edge value is already in every clamped window
    padded = np.pad(x, h, mode="edge")
    return np.lib.stride_tricks.sliding_window_view(padded, 2 * h + 1).max(axis=1)


@dataclass(frozen=True)
class SyntheticTraceSpec:
    pattern: Literal["diurnal", "hourly_spikes", "sporadic_spikes", "constant"] = "diurnal"
    base_rate: float = 1.0
    peak_rate: float = 10.0
    period_intervals: int = 2880
    noise_seed: int = 0
    horizon_intervals: int = 2880
    spike_period_jitter: float = 0.2
    spike_width_intervals: int = 2
    interval_seconds: int = 30
    start_time: int = 0

    def __post_init__(self):
        if self.pattern not in ("diurnal", "hourly_spikes", "sporadic_spikes", "constant"):
            raise ValueError(f"unknown pattern {self.pattern!r}")
        if self.base_rate < 0 or self.peak_rate < self.base_rate:
            raise ValueError("need 0 <= base_rate <= peak_rate")
        if self.period_intervals < 1 or self.horizon_intervals < 1:
            raise ValueError("period and horizon must be positive")
        if self.spike_period_jitter < 0:
            raise ValueError("spike_period_jitter must be >= 0")


def expected_rates(spec: SyntheticTraceSpec) -> np.ndarray:
    """Noise-free mean request count per interval for ``spec``."""
    t = np.arange(spec.horizon_intervals)
    base, peak, period = spec.base_rate, spec.peak_rate, spec.period_intervals
    if spec.pattern == "constant":
        return np.full(t.size, base, dtype=float)
    if spec.pattern == "diurnal":
        # trough at phase 0, peak half a period later
        return base + (peak - base) * 0.5 * (1.0 - np.cos(2.0 * np.pi * t / period))
    rates = np.full(t.size, base, dtype=float)
    width = max(1, spec.spike_width_intervals)
    if spec.pattern == "hourly_spikes":
        rates[(t % period) < width] = peak
        return rates
    # sporadic spikes: gaps drawn around the nominal period, from a stream separate from the noise
    rng = np.random.default_rng([spec.noise_seed, 1])
    j = spec.spike_period_jitter
    pos = period * rng.uniform(0.5, 1.0)
    while pos < t.size:
        start = int(pos)
        rates[start : start + width] = peak
        pos += period * (1.0 + rng.uniform(-j, j))
    return rates


def generate_trace(spec: SyntheticTraceSpec) -> DemandTrace:
    """Poisson counts around :func:`expected_rates`, seeded by ``spec.noise_seed``."""
    rng = np.random.default_rng([spec.noise_seed, 0])
    counts = rng.poisson(expected_rates(spec))
    return DemandTrace(counts, spec.interval_seconds, spec.start_time)


def write_trace(trace: DemandTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "count"])
        for ts, c in zip(trace.times().tolist(), trace.counts.tolist()):
            w.writerow([ts, c])


def read_trace(path: str | Path, interval_seconds: int | None = None) -> DemandTrace:
    """Parse a ``timestamp,count`` CSV.

    The interval width is inferred from consecutive rows; a one-row file
    cannot carry it, so ``interval_seconds`` (default 30) is used there. When
    given for a longer file it must match the inferred width.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["timestamp", "count"]:
        raise TraceFormatError("missing header 'timestamp,count'", 1)
    times: list[int] = []
    counts: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise TraceFormatError(f"expected 2 fields, got {len(row)}", lineno)
        try:
            ts, c = int(row[0]), int(row[1])
        except ValueError:
            raise TraceFormatError(f"non-integer field in {row!r}", lineno) from None
        if c < 0:
            raise TraceFormatError(f"negative count {c}", lineno)
        if times:
            step = ts - times[-1]
            if step <= 0:
                raise TraceFormatError("timestamps must be strictly increasing", lineno)
            if len(times) >= 2 and step != times[-1] - times[-2]:
                raise TraceFormatError(f"non-uniform interval {step}", lineno)
        times.append(ts)
        counts.append(c)
    if not counts:
        raise TraceFormatError("no data rows", len(rows))
    if len(times) > 1:
        interval = times[1] - times[0]
        if interval_seconds is not None and interval != interval_seconds:
            raise TraceFormatError(f"interval {interval} s differs from the expected {interval_seconds} s", 3)
    else:
        interval = interval_seconds or 30
    return DemandTrace(np.array(counts), interval, times[0])
