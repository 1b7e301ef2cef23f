"""Interval-granular replay of a pool-size schedule against a demand trace.

Arrivals land at the start of their interval. Within an interval the order is:
hydrations that complete become ready (serving queued requests first), the
target pool size is adjusted, then the interval's arrivals are served.
Idle time is counted for every ready, unclaimed cluster at the end of each
interval; wait time for every request still queued. Both are therefore
areas over ``[0, T)``, while ``per_request_wait`` holds each request's full
wait even when its cluster becomes ready after the horizon.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .schedule import CumulativeCurves, PoolSchedule, ready_curve
from .trace import DemandTrace


@dataclass(frozen=True)
class SimulatorConfig:
    tau_intervals: int = 4
    miss_policy: Literal["fcfs", "on_demand"] = "fcfs"
    shrink_policy: Literal["evict_idle_then_cancel"] = "evict_idle_then_cancel"
    record_events: bool = False

    def __post_init__(self):
        if self.tau_intervals < 1:
            raise ValueError("tau_intervals must be >= 1")
        if self.miss_policy not in ("fcfs", "on_demand"):
            raise ValueError(f"unknown miss policy {self.miss_policy!r}")
        if self.shrink_policy != "evict_idle_then_cancel":
            raise ValueError(f"unknown shrink policy {self.shrink_policy!r}")


@dataclass
class SimulationReport:
    total_idle_intervals: float
    total_wait_intervals: float
    per_request_wait: np.ndarray
    hit_count: int
    miss_count: int
    hit_rate: float
    curves: CumulativeCurves
    # cluster bookkeeping, used for the conservation check
    initial_clusters: int = 0
    hydrations_requested: int = 0
    consumed: int = 0
    evicted: int = 0
    cancelled: int = 0
    idle_at_end: int = 0
    in_flight_at_end: int = 0
    on_demand_created: int = 0
    events: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def total_requests(self) -> int:
        return self.hit_count + self.miss_count

    def average_wait(self) -> float:
        return float(self.per_request_wait.mean()) if self.per_request_wait.size else 0.0


def simulate(trace: DemandTrace, schedule: PoolSchedule, config: SimulatorConfig) -> SimulationReport:
    T = trace.horizon
    if schedule.horizon != T:
        raise ValueError(f"schedule horizon {schedule.horizon} != trace horizon {T}")
    target = schedule.values
    if not np.all(target == np.round(target)) or np.any(target < 0):
        raise ValueError("simulated schedules must hold non-negative integer pool sizes")
    if np.any(target < schedule.min_pool) or np.any(target > schedule.max_pool):
        raise ValueError("schedule values outside its declared bounds")
    target = target.astype(np.int64)
    counts = trace.counts
    tau = config.tau_intervals
    fcfs = config.miss_policy == "fcfs"
    log = config.record_events
    events: list[tuple[int, str, str]] = []

    # in-flight hydrations bucketed by the interval they become ready
    inflight = np.zeros(T + tau + 1, dtype=np.int64)
    inflight_total = 0
    idle = int(target[0])
    queue: deque[list[int]] = deque()  # [arrival_interval, n_waiting]
    queued = 0
    waits = np.zeros(int(counts.sum()), dtype=np.int64)
    next_req = 0  # requests are numbered in arrival order
    queue_ids: deque[int] = deque()  # first request id of each queue group
    miss_arrivals: list[tuple[int, int, int]] = []  # on_demand misses: (arrival, first id, n)

    stats = dict(hydrations=0, consumed=0, evicted=0, cancelled=0, on_demand=0)
    total_idle = 0
    total_wait = 0
    hits = 0

    def serve_queue(n: int, t: int) -> int:
        # FCFS: freshly ready clusters go to the oldest waiting requests
        nonlocal queued
        used = 0
        while n > 0 and queue:
            grp = queue[0]
            take = min(n, grp[1])
            first = queue_ids[0]
            waits[first : first + take] = t - grp[0]
            grp[1] -= take
            queue_ids[0] += take
            if grp[1] == 0:
                queue.popleft()
                queue_ids.popleft()
            n -= take
            used += take
        queued -= used
        return used

    for t in range(T):
        ready = int(inflight[t])
        if ready:
            inflight_total -= ready
            inflight[t] = 0
            if log:
                events.append((t, "cluster_ready", str(ready)))
            used = serve_queue(ready, t)
            stats["consumed"] += used
            idle += ready - used

        if t > 0 and target[t] != target[t - 1]:
            change = int(target[t] - target[t - 1])
            if change > 0:
                inflight[t + tau] += change
                inflight_total += change
                stats["hydrations"] += change
                if log:
                    events.append((t, "hydrate_request", str(change)))
            else:
                drop = -change
                ev = min(drop, idle)
                idle -= ev
                stats["evicted"] += ev
                if log and ev:
                    events.append((t, "evict", str(ev)))
                drop -= ev
                # in-flight clusters owed to queued requests are never cancelled
                cancel = min(drop, inflight_total - queued)
                stats["cancelled"] += cancel
                inflight_total -= cancel
                if log and cancel:
                    events.append((t, "cancel", str(cancel)))
                k = len(inflight) - 1
                while cancel > 0:
                    take = min(cancel, int(inflight[k]))
                    inflight[k] -= take
                    cancel -= take
                    k -= 1

        c = int(counts[t])
        if c:
            if log:
                events.append((t, "arrival", str(c)))
            h = min(c, idle)
            idle -= h
            hits += h
            stats["consumed"] += h
            next_req += h  # waits already zero
            miss = c - h
            if log and h:
                events.append((t, "hit", str(h)))
            if log and miss:
                events.append((t, "miss", str(miss)))
            if fcfs:
                refill = c
                if miss:
                    queue.append([t, miss])
                    queue_ids.append(next_req)
                    queued += miss
                    next_req += miss
            else:
                # on-demand: each miss gets a private cluster after tau, the pool is untouched
                refill = h
                if miss:
                    waits[next_req : next_req + miss] = tau
                    miss_arrivals.append((t, next_req, miss))
                    stats["on_demand"] += miss
                    next_req += miss
            if refill:
                inflight[t + tau] += refill
                inflight_total += refill
                stats["hydrations"] += refill
                if log:
                    events.append((t, "hydrate_request", str(refill)))

        total_idle += idle
        total_wait += queued

    # requests still queued at the horizon are matched to remaining hydrations in ready order
    if queue:
        for r in np.nonzero(inflight)[0]:
            n = int(inflight[r])
            while n > 0 and queue:
                grp = queue[0]
                take = min(n, grp[1])
                first = queue_ids[0]
                waits[first : first + take] = r - grp[0]
                grp[1] -= take
                queue_ids[0] += take
                if grp[1] == 0:
                    queue.popleft()
                    queue_ids.popleft()
                n -= take
    for a, _, n in miss_arrivals:
        total_wait += n * min(tau, T - a)

    n_req = int(counts.sum())
    miss_count = n_req - hits
    cum = trace.cumulative()
    return SimulationReport(
        total_idle_intervals=float(total_idle),
        total_wait_intervals=float(total_wait),
        per_request_wait=waits.astype(float),
        hit_count=hits,
        miss_count=miss_count,
        hit_rate=hits / n_req if n_req else 1.0,
        curves=ready_curve(cum, target, tau),
        initial_clusters=int(target[0]),
        hydrations_requested=stats["hydrations"],
        consumed=stats["consumed"],
        evicted=stats["evicted"],
        cancelled=stats["cancelled"],
        idle_at_end=idle,
        in_flight_at_end=inflight_total,
        on_demand_created=stats["on_demand"],
        events=events,
    )


def write_event_log(report: SimulationReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["interval", "event", "detail"])
        w.writerows(report.events)
