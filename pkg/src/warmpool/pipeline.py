"""Recommendation engines (two-step and end-to-end) and the evaluation harness.

two_step: forecast demand, then solve the LP on the forecast.
e2e: solve the LP over rolling historical windows to get an optimal pool-size
series, then forecast that series directly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Literal, Protocol, Sequence, TextIO

import numpy as np

from .forecaster import (
    BaselineConfig,
    BaselineForecaster,
    HybridForecaster,
    Series,
    TrainingConfig,
    accuracy_metrics,
)
from .optimizer import OptimizerConfig, optimize, round_schedule, smooth_schedule
from .schedule import PoolSchedule, block_index
from .simulator import SimulatorConfig, simulate
from .trace import DemandTrace, SmoothingConfig, max_filter


CSV_COLUMNS = ["alpha_prime", "idle_seconds", "wait_seconds", "avg_wait_seconds", "hit_rate", "is_baseline"]

if TYPE_CHECKING:
    from .autotuner import TunerState


class UnreachableTargetError(RuntimeError):
    pass


class Forecaster(Protocol):
    def fit(self, history) -> "Forecaster": ...

    def predict(self, history, horizon: int) -> np.ndarray: ...


@dataclass(frozen=True)
class PipelineConfig:
    mode: Literal["two_step", "e2e"] = "two_step"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    schedule_smoothing: bool = False
    history_window_intervals: int = 40320
    horizon_intervals: int = 120
    window_length: int = 150
    ssa_series_length: int | None = 1800
    rank: int | None = None
    energy: float = 0.9
    correct: bool = True
    guardrail_multiple: float = 3.0
    guardrail_tail_intervals: int = 120
    baseline_gamma: float = 1.0
    e2e_label_intervals: int = 2880

    def __post_init__(self):
        if self.mode not in ("two_step", "e2e"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.horizon_intervals < 1 or self.history_window_intervals < 1:
            raise ValueError("horizon and history window must be positive")
        if self.guardrail_multiple <= 0:
            raise ValueError("guardrail_multiple must be positive")

    def with_alpha(self, alpha_prime: float) -> "PipelineConfig":
        return replace(self, optimizer=self.optimizer.with_alpha(alpha_prime))

    def make_forecaster(self) -> HybridForecaster:
        return HybridForecaster(
            window_length=self.window_length,
            series_length=self.ssa_series_length,
            rank=self.rank,
            energy=self.energy,
            training=replace(self.training, horizon=min(self.training.horizon, self.horizon_intervals)),
            correct=self.correct,
        )


@dataclass
class Recommendation:
    generated_at: int
    horizon_intervals: int
    schedule: PoolSchedule
    source_mode: str
    alpha_prime_used: float
    forecast: np.ndarray | None = None
    degraded: bool = False

    @property
    def interval_seconds(self) -> int:
        return self.schedule.interval_seconds


@dataclass(frozen=True)
class EvalPoint:
    alpha_prime: float
    idle_seconds: float
    wait_seconds: float
    avg_wait_seconds: float
    hit_rate: float
    is_baseline: bool = False


@dataclass
class EvaluationReport:
    points: list[EvalPoint]
    baseline_static: EvalPoint | None = None
    idle_reduction_vs_static: float = math.nan

    def write_csv(self, dest: str | Path | TextIO) -> None:
        if not hasattr(dest, "write"):
            with open(dest, "w", newline="") as fh:
                return self.write_csv(fh)
        rows = list(self.points) + ([self.baseline_static] if self.baseline_static else [])
        w = csv.writer(dest)
        w.writerow(CSV_COLUMNS)
        for p in rows:
            w.writerow([p.alpha_prime, p.idle_seconds, p.wait_seconds, p.avg_wait_seconds, p.hit_rate, int(p.is_baseline)])


@dataclass
class StaticComparison:
    static_point: EvalPoint
    dynamic_point: EvalPoint
    idle_reduction: float
    static_pool_size: int
    target_met: bool = True


class OracleForecaster:
    """Returns the true demand that follows the given history (for tests and upper bounds)."""

    def __init__(self, truth: DemandTrace):
        self.truth = truth

    def fit(self, history) -> "OracleForecaster":
        return self

    def predict(self, history, horizon: int) -> np.ndarray:
        off = (history.end_time - self.truth.start_time) // self.truth.interval_seconds
        if off < 0 or off + horizon > self.truth.horizon:
            raise ValueError("oracle truth does not cover the requested window")
        return self.truth.counts[off : off + horizon].astype(float)


class PersistenceForecaster:
    """Repeats the most recent ``horizon`` intervals: a noisy sample path rather than a mean."""

    def fit(self, history) -> "PersistenceForecaster":
        return self

    def predict(self, history, horizon: int) -> np.ndarray:
        x = np.asarray(history.counts, dtype=float)
        if x.size == 0:
            raise ValueError("empty history")
        reps = -(-horizon // x.size)
        return np.tile(x[-horizon:], reps)[:horizon] if x.size >= horizon else np.tile(x, reps)[:horizon]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _smoothed(trace: DemandTrace, cfg: SmoothingConfig) -> DemandTrace:
    if cfg.smoothing_factor == 0:
        return trace
    return DemandTrace(max_filter(trace.counts, cfg).astype(np.int64), trace.interval_seconds, trace.start_time)


def _prepare_history(history: DemandTrace, config: PipelineConfig) -> DemandTrace:
    hist = history.tail(config.history_window_intervals)
    if hist.horizon < 2 * config.window_length:
        raise ValueError(f"history needs at least {2 * config.window_length} intervals, got {hist.horizon}")
    return hist


def schedule_from_demand(demand: np.ndarray, config: PipelineConfig, interval_seconds: int = 30) -> PoolSchedule:
    """LP on a demand path, rounded, optionally max-filtered with SF = tau."""
    opt = config.optimizer
    sched = round_schedule(optimize(np.asarray(demand, dtype=float), opt))
    if config.schedule_smoothing:
        sched = smooth_schedule(sched, opt.tau_intervals, opt.max_new_request)
    if sched.interval_seconds != interval_seconds:
        sched = PoolSchedule(sched.values, sched.block_length, sched.min_pool, sched.max_pool, interval_seconds)
    return sched


def _schedule_from_pool_forecast(pool: np.ndarray, config: PipelineConfig, interval_seconds: int) -> PoolSchedule:
    opt = config.optimizer
    H = pool.size
    S = opt.stableness_intervals
    blk = block_index(H, S)
    sums = np.bincount(blk, weights=pool)
    means = sums / np.bincount(blk)
    bv = np.clip(np.ceil(means - 1e-9), opt.min_pool, opt.max_pool)
    if opt.max_new_request is not None:
        step = math.floor(opt.max_new_request)
        for k in range(1, bv.size):
            bv[k] = min(bv[k], bv[k - 1] + step)
    sched = PoolSchedule.from_blocks(bv, H, S, min_pool=opt.min_pool, max_pool=opt.max_pool, interval_seconds=interval_seconds)
    if config.schedule_smoothing:
        sched = smooth_schedule(sched, opt.tau_intervals, opt.max_new_request)
    return sched


def _check_feasible(sched: PoolSchedule, config: PipelineConfig) -> None:
    bad = sched.violations(config.optimizer.max_new_request)
    if bad or not sched.is_integral():
        raise RuntimeError(f"infeasible recommendation: {bad or ['integrality']}")


def fit_guarded(hist: DemandTrace, config: PipelineConfig, forecaster: Forecaster | None = None):
    """Fit the forecaster on all but a held-out tail and validate against the baseline.

    Returns ``(forecaster, degraded)``. When the forecaster's tail MAE exceeds
    ``guardrail_multiple`` times the baseline's, the baseline is returned.
    """
    fc = forecaster if forecaster is not None else config.make_forecaster()
    tail = min(config.guardrail_tail_intervals, hist.horizon - 2 * config.window_length)
    baseline = BaselineForecaster(BaselineConfig(config.baseline_gamma))
    if tail < 1:
        return fc.fit(hist), False
    train = hist.window(0, hist.horizon - tail)
    truth = hist.counts[-tail:].astype(float)
    try:
        fc.fit(train)
        pred = np.asarray(fc.predict(train, tail), dtype=float)
        ok = pred.shape == truth.shape and bool(np.all(np.isfinite(pred)))
    except (ValueError, ArithmeticError, RuntimeError):
        ok = False
    if ok:
        mae = accuracy_metrics(truth, pred)[0]
        base_mae = accuracy_metrics(truth, baseline.fit(train).predict(train, tail))[0]
        ok = mae <= config.guardrail_multiple * base_mae + 1e-9
    if not ok:
        return baseline.fit(hist), True
    return fc, False


def _safe_forecast(fc: Forecaster, hist, horizon: int) -> np.ndarray:
    pred = np.asarray(fc.predict(hist, horizon), dtype=float)
    if pred.shape != (horizon,) or not np.all(np.isfinite(pred)):
        raise ValueError("forecaster returned an invalid forecast")
    return np.maximum(pred, 0.0)


# ---------------------------------------------------------------------------
# recommendation engines
# ---------------------------------------------------------------------------


def recommend_two_step(
    history: DemandTrace, config: PipelineConfig, forecaster: Forecaster | None = None
) -> Recommendation:
    hist = _smoothed(_prepare_history(history, config), config.smoothing)
    fc, degraded = fit_guarded(hist, config, forecaster)
    H = config.horizon_intervals
    try:
        forecast = _safe_forecast(fc, hist, H)
    except (ValueError, ArithmeticError):
        fc, degraded = BaselineForecaster(BaselineConfig(config.baseline_gamma)).fit(hist), True
        forecast = _safe_forecast(fc, hist, H)
    sched = schedule_from_demand(forecast, config, hist.interval_seconds)
    _check_feasible(sched, config)
    return Recommendation(hist.end_time, H, sched, "two_step", config.optimizer.alpha_prime, forecast, degraded)


def historical_optimal_series(hist: DemandTrace, config: PipelineConfig) -> Series:
    """Continuous LP optimum of rolling windows over the recent history.

    Windows of length ``horizon`` start at every block boundary; each window's
    first-block value labels the intervals of that block.
    """
    H, S = config.horizon_intervals, config.optimizer.stableness_intervals
    n = hist.horizon
    span = min(config.e2e_label_intervals + H, n)
    first = n - span
    # align windows to absolute block boundaries so labels share the schedule's grid
    first += (-first) % S
    counts = hist.counts.astype(float)
    starts = range(first, n - H + 1, S)
    labels = np.empty(0)
    for s in starts:
        sol = optimize(counts[s : s + H], config.optimizer)
        labels = np.append(labels, np.full(S, sol.schedule.values[0]))
    return Series(labels, hist.interval_seconds, hist.start_time + first * hist.interval_seconds)


def recommend_e2e(
    history: DemandTrace, config: PipelineConfig, forecaster: Forecaster | None = None
) -> Recommendation:
    hist = _smoothed(_prepare_history(history, config), config.smoothing)
    labels = historical_optimal_series(hist, config)
    if len(labels) < 2 * config.window_length:
        raise ValueError(f"only {len(labels)} historical labels; need {2 * config.window_length}")
    fc = forecaster if forecaster is not None else config.make_forecaster()
    fc.fit(labels)
    H = config.horizon_intervals
    # labels end H intervals before the history does; forecast through that gap too
    gap = (hist.end_time - _series_end(labels)) // hist.interval_seconds
    pool = _safe_forecast(fc, labels, gap + H)[-H:]
    sched = _schedule_from_pool_forecast(pool, config, hist.interval_seconds)
    _check_feasible(sched, config)
    return Recommendation(hist.end_time, H, sched, "e2e", config.optimizer.alpha_prime, None, False)


def _series_end(s: Series) -> int:
    return s.start_time + len(s) * s.interval_seconds


def recommend(history: DemandTrace, config: PipelineConfig, forecaster: Forecaster | None = None) -> Recommendation:
    fn = recommend_two_step if config.mode == "two_step" else recommend_e2e
    return fn(history, config, forecaster)


# ---------------------------------------------------------------------------
# walk-forward evaluation
# ---------------------------------------------------------------------------


def _window_starts(future: DemandTrace, H: int) -> list[int]:
    return list(range(0, future.horizon, H))


def walk_forward_forecasts(
    history: DemandTrace, future: DemandTrace, config: PipelineConfig, forecaster: Forecaster | None = None
) -> list[np.ndarray]:
    """Demand forecasts for consecutive ``horizon`` windows of ``future``.

    The forecaster is fitted once on ``history``; each window is forecast
    from everything observed before it. Forecasts do not depend on the LP
    weight, so one set serves a whole sweep.
    """
    hist = _smoothed(_prepare_history(history, config), config.smoothing)
    fc, _ = fit_guarded(hist, config, forecaster)
    full = history.extend(future)
    H = config.horizon_intervals
    out = []
    for s in _window_starts(future, H):
        ctx = full.window(0, history.horizon + s).tail(config.history_window_intervals)
        ctx = _smoothed(ctx, config.smoothing)
        out.append(_safe_forecast(fc, ctx, min(H, future.horizon - s)))
    return out


def _concat(schedules: list[PoolSchedule], config: PipelineConfig, interval_seconds: int) -> PoolSchedule:
    opt = config.optimizer
    values = np.concatenate([s.values for s in schedules])
    return PoolSchedule(values, opt.stableness_intervals, opt.min_pool, opt.max_pool, interval_seconds)


def rolling_schedule(
    history: DemandTrace,
    future: DemandTrace,
    config: PipelineConfig,
    forecasts: list[np.ndarray] | None = None,
    forecaster: Forecaster | None = None,
) -> PoolSchedule:
    """Schedule covering ``future``, re-solved for each horizon window."""
    if config.horizon_intervals % config.optimizer.stableness_intervals:
        raise ValueError("horizon must be a multiple of the stability block")
    dt = future.interval_seconds
    if config.mode == "two_step":
        if forecasts is None:
            forecasts = walk_forward_forecasts(history, future, config, forecaster)
        parts = [schedule_from_demand(f, config, dt) for f in forecasts]
    else:
        full = history.extend(future)
        parts = []
        for s in _window_starts(future, config.horizon_intervals):
            rec = recommend_e2e(full.window(0, history.horizon + s), config, forecaster)
            parts.append(rec.schedule.replace_values(rec.schedule.values[: future.horizon - s]))
    return _concat(parts, config, dt)


def evaluate_point(future: DemandTrace, schedule: PoolSchedule, config: PipelineConfig, alpha: float, is_baseline=False) -> EvalPoint:
    rep = simulate(future, schedule, SimulatorConfig(tau_intervals=config.optimizer.tau_intervals))
    dt = future.interval_seconds
    return EvalPoint(
        float(alpha),
        rep.total_idle_intervals * dt,
        rep.total_wait_intervals * dt,
        rep.average_wait() * dt,
        rep.hit_rate,
        is_baseline,
    )


def baseline_schedule(history: DemandTrace, future: DemandTrace, config: PipelineConfig) -> PoolSchedule:
    """No-intelligence static schedule: the LP on a constant gamma*peak forecast."""
    level = config.baseline_gamma * float(history.tail(config.history_window_intervals).counts.max())
    parts = [
        schedule_from_demand(np.full(min(config.horizon_intervals, future.horizon - s), level), config, future.interval_seconds)
        for s in _window_starts(future, config.horizon_intervals)
    ]
    return _concat(parts, config, future.interval_seconds)


def pareto_sweep(
    history: DemandTrace,
    future: DemandTrace,
    config: PipelineConfig,
    alphas: Sequence[float],
    forecaster: Forecaster | None = None,
) -> EvaluationReport:
    alphas = sorted(float(a) for a in alphas)
    if not alphas or any(not 0.0 <= a <= 1.0 for a in alphas):
        raise ValueError("alphas must be a non-empty list of values in [0, 1]")
    forecasts = walk_forward_forecasts(history, future, config, forecaster) if config.mode == "two_step" else None
    points = [
        evaluate_point(future, rolling_schedule(history, future, config.with_alpha(a), forecasts, forecaster), config, a)
        for a in alphas
    ]
    base = evaluate_point(
        future, baseline_schedule(history, future, config), config, config.optimizer.alpha_prime, is_baseline=True
    )
    # idle saving of the leanest point that matches the baseline's hit rate
    matched = [p.idle_seconds for p in points if p.hit_rate >= base.hit_rate]
    red = 1.0 - min(matched) / base.idle_seconds if matched and base.idle_seconds > 0 else math.nan
    return EvaluationReport(points, base, red)


def static_pool_for_target(future: DemandTrace, config: PipelineConfig, target_hit_rate: float) -> tuple[int, EvalPoint]:
    """Smallest constant pool whose simulated hit rate on ``future`` reaches the target."""
    opt = config.optimizer
    for N in range(int(opt.min_pool), int(opt.max_pool) + 1):
        sched = PoolSchedule.constant(N, future.horizon, min_pool=opt.min_pool, max_pool=opt.max_pool,
                                      interval_seconds=future.interval_seconds)
        p = evaluate_point(future, sched, config, math.nan, is_baseline=True)
        if p.hit_rate >= target_hit_rate:
            return N, p
    raise UnreachableTargetError(
        f"hit rate {target_hit_rate} unreachable with a static pool of up to {opt.max_pool} clusters"
    )


def compare_static(
    history: DemandTrace,
    future: DemandTrace,
    config: PipelineConfig,
    target_hit_rate: float = 0.99,
    forecaster: Forecaster | None = None,
    bisection_steps: int = 10,
) -> StaticComparison:
    """Best static pool vs the dynamic pipeline at the largest alpha_prime meeting the target."""
    if not 0.0 < target_hit_rate <= 1.0:
        raise ValueError("target_hit_rate must lie in (0, 1]")
    N, static = static_pool_for_target(future, config, target_hit_rate)
    forecasts = walk_forward_forecasts(history, future, config, forecaster) if config.mode == "two_step" else None

    def point(a: float) -> EvalPoint:
        return evaluate_point(future, rolling_schedule(history, future, config.with_alpha(a), forecasts, forecaster), config, a)

    lo = point(0.0)
    met = lo.hit_rate >= target_hit_rate
    best = lo
    if met:
        hi = point(1.0)
        if hi.hit_rate >= target_hit_rate:
            best = hi
        else:
            a_lo, a_hi = 0.0, 1.0
            for _ in range(bisection_steps):
                mid = 0.5 * (a_lo + a_hi)
                p = point(mid)
                if p.hit_rate >= target_hit_rate:
                    a_lo, best = mid, p
                else:
                    a_hi = mid
    red = 1.0 - best.idle_seconds / static.idle_seconds if static.idle_seconds > 0 else 0.0
    return StaticComparison(replace(static, alpha_prime=math.nan), best, red, N, met)


# ---------------------------------------------------------------------------
# closed-loop tuning
# ---------------------------------------------------------------------------


def closed_loop_tuning(
    trace: DemandTrace,
    config: PipelineConfig,
    state: "TunerState",
    cycles: int,
    warmup_intervals: int | None = None,
    forecaster: Forecaster | None = None,
    probe_step: float = 0.2,
) -> list[tuple[float, float]]:
    """Tune -> optimize -> simulate -> observe, one horizon window per cycle.

    Returns ``(alpha_prime, measured average wait in seconds)`` per cycle.
    Each step goes through ``tune_step``, which probes by ``probe_step``
    whenever the fitted line gives no move or the wrong direction.
    """
    from .autotuner import tune_step

    H = config.horizon_intervals
    fc = forecaster if forecaster is not None else PersistenceForecaster()
    start = H if warmup_intervals is None else warmup_intervals
    if start + cycles * H > trace.horizon:
        raise ValueError("trace too short for the requested number of cycles")
    out = []
    for k in range(cycles):
        s = start + k * H
        hist, fut = trace.window(0, s), trace.window(s, s + H)
        alpha = state.current_alpha
        forecast = _safe_forecast(fc.fit(hist), hist, H)
        sched = schedule_from_demand(forecast, config.with_alpha(alpha), trace.interval_seconds)
        rep = simulate(fut, sched, SimulatorConfig(tau_intervals=config.optimizer.tau_intervals))
        wait = rep.average_wait() * trace.interval_seconds
        out.append((alpha, wait))
        state = tune_step(state, alpha, wait, probe_step)
    return out
