"""Command-line entry points.

Every flag can also be set through an environment variable named
``WARMPOOL_<FLAG>`` (upper case, dashes as underscores); explicit flags win.
Exit codes: 0 success, 2 usage error (bad flags or unreadable inputs),
1 runtime failure. Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from .forecaster import BaselineConfig, HybridForecaster, TrainingConfig, baseline_predict, save_model
from .optimizer import OptimizerConfig, build_lp, dump_lp, round_schedule, solve
from .pipeline import PipelineConfig, compare_static, pareto_sweep, recommend
from .schedule import PoolSchedule
from .service import ServiceConfig, read_recommendation, recommendation_document, run_service, schedule_values, write_json_atomic
from .simulator import SimulatorConfig, simulate, write_event_log
from .trace import SmoothingConfig, SyntheticTraceSpec, TraceFormatError, generate_trace, read_trace, write_trace

ENV_PREFIX = "WARMPOOL_"


class UsageError(Exception):
    pass


def _env(flag: str, default=None):
    return os.environ.get(ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper(), default)


def _add(p: argparse.ArgumentParser, flag: str, **kw):
    kw["default"] = _env(flag, kw.get("default"))
    if kw.get("required") and kw["default"] is not None:
        kw["required"] = False
    p.add_argument(flag, **kw)


def _optimizer_flags(p):
    _add(p, "--alpha-prime", type=float, default=0.5, help="idle weight in [0, 1]")
    _add(p, "--tau", type=int, default=4, help="hydration delay in intervals")
    _add(p, "--min-pool", type=int, default=0)
    _add(p, "--max-pool", type=int, default=100)
    _add(p, "--block", type=int, default=10, help="stability block length in intervals")
    _add(p, "--max-new-request", type=float, default=None, help="ramp limit per block boundary (default unbounded)")


def _pipeline_flags(p):
    _optimizer_flags(p)
    _add(p, "--mode", choices=["two_step", "e2e"], default="two_step")
    _add(p, "--horizon", type=int, default=120, help="recommendation horizon in intervals")
    _add(p, "--seed", type=int, default=0)
    _add(p, "--smoothing-factor", type=int, default=0, help="max-filter demand before training")
    _add(p, "--schedule-smoothing", action="store_true", default=False)
    _add(p, "--window-length", type=int, default=150)


def _optimizer_config(a) -> OptimizerConfig:
    return OptimizerConfig(a.alpha_prime, a.tau, a.min_pool, a.max_pool, a.block, a.max_new_request)


def _pipeline_config(a) -> PipelineConfig:
    return PipelineConfig(
        mode=a.mode,
        optimizer=_optimizer_config(a),
        training=TrainingConfig(seed=a.seed, horizon=a.horizon),
        smoothing=SmoothingConfig(a.smoothing_factor),
        schedule_smoothing=bool(a.schedule_smoothing),
        horizon_intervals=a.horizon,
        window_length=a.window_length,
    )


def _load_trace(path):
    if path is None:
        raise UsageError("--trace is required")
    try:
        return read_trace(path)
    except (OSError, TraceFormatError) as e:
        raise UsageError(f"cannot read trace {path}: {e}") from e


def _emit(doc: dict, out: str | None):
    text = json.dumps(doc, indent=1)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _split(trace, test_intervals: int):
    if not 0 < test_intervals < trace.horizon:
        raise UsageError("--test-intervals must be between 1 and the trace length - 1")
    return trace.window(0, trace.horizon - test_intervals), trace.window(trace.horizon - test_intervals)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_trace(a) -> int:
    spec = SyntheticTraceSpec(
        pattern=a.pattern,
        base_rate=a.base_rate,
        peak_rate=a.peak_rate,
        period_intervals=a.period,
        noise_seed=a.seed,
        horizon_intervals=a.horizon,
        interval_seconds=a.interval_seconds,
        start_time=a.start_time,
    )
    write_trace(generate_trace(spec), a.out)
    return 0


def cmd_simulate(a) -> int:
    trace = _load_trace(a.trace)
    if (a.pool is None) == (a.schedule is None):
        raise UsageError("give exactly one of --pool and --schedule")
    if a.pool is not None:
        sched = PoolSchedule.constant(a.pool, trace.horizon, interval_seconds=trace.interval_seconds)
    else:
        try:
            values = schedule_values(read_recommendation(a.schedule))
        except (OSError, ValueError, KeyError) as e:
            raise UsageError(f"cannot read schedule {a.schedule}: {e}") from e
        if values.size < trace.horizon:
            raise UsageError("schedule is shorter than the trace")
        sched = PoolSchedule(values[: trace.horizon], interval_seconds=trace.interval_seconds)
    cfg = SimulatorConfig(tau_intervals=a.tau, miss_policy=a.miss_policy, record_events=a.events is not None)
    rep = simulate(trace, sched, cfg)
    if a.events:
        write_event_log(rep, a.events)
    dt = trace.interval_seconds
    _emit(
        {
            "idle_seconds": rep.total_idle_intervals * dt,
            "wait_seconds": rep.total_wait_intervals * dt,
            "avg_wait_seconds": rep.average_wait() * dt,
            "hit_count": rep.hit_count,
            "miss_count": rep.miss_count,
            "hit_rate": rep.hit_rate,
        },
        a.out,
    )
    return 0


def cmd_optimize(a) -> int:
    trace = _load_trace(a.trace)
    cfg = _optimizer_config(a)
    problem = build_lp(trace, cfg)
    if a.dump_lp:
        dump_lp(problem, a.dump_lp)
    sol = solve(problem)
    sched = round_schedule(sol)
    doc = recommendation_document(
        PoolSchedule(sched.values, sched.block_length, interval_seconds=trace.interval_seconds),
        trace.start_time, cfg.alpha_prime, "optimize",
    )
    doc["objective"] = sol.objective
    doc["total_idle_intervals"] = sol.total_idle
    doc["total_wait_intervals"] = sol.total_wait
    _emit(doc, a.out)
    return 0


def cmd_forecast(a) -> int:
    trace = _load_trace(a.trace)
    if a.baseline:
        pred = baseline_predict(trace, BaselineConfig(a.gamma), a.horizon)
    else:
        fc = HybridForecaster(window_length=a.window_length, training=TrainingConfig(seed=a.seed, horizon=a.horizon,
                                                                                     alpha_prime_loss=a.alpha_prime_loss))
        fc.fit(trace)
        pred = fc.predict(trace, a.horizon)
        if a.model_out:
            save_model(a.model_out, fc.ssa, fc.corrector)
    lines = ["timestamp,forecast"]
    lines += [f"{trace.end_time + k * trace.interval_seconds},{v!r}" for k, v in enumerate(pred.tolist())]
    text = "\n".join(lines) + "\n"
    if a.out:
        Path(a.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_recommend(a) -> int:
    trace = _load_trace(a.trace)
    rec = recommend(trace, _pipeline_config(a))
    doc = recommendation_document(rec.schedule, rec.generated_at, rec.alpha_prime_used, rec.source_mode)
    doc["degraded"] = rec.degraded
    if a.out:
        write_json_atomic(a.out, doc)
    else:
        print(json.dumps(doc, indent=1))
    return 0


def cmd_sweep(a) -> int:
    trace = _load_trace(a.trace)
    hist, fut = _split(trace, a.test_intervals)
    try:
        alphas = [float(x) for x in a.alphas.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"bad --alphas: {e}") from e
    report = pareto_sweep(hist, fut, _pipeline_config(a), alphas)
    if a.out:
        report.write_csv(a.out)
    else:
        report.write_csv(sys.stdout)
    return 0


def cmd_compare_static(a) -> int:
    trace = _load_trace(a.trace)
    hist, fut = _split(trace, a.test_intervals)
    res = compare_static(hist, fut, _pipeline_config(a), a.target_hit_rate)

    def pt(p):
        d = dict(p.__dict__)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    _emit(
        {
            "static": pt(res.static_point),
            "static_pool_size": res.static_pool_size,
            "dynamic": pt(res.dynamic_point),
            "idle_reduction": res.idle_reduction,
            "target_met": res.target_met,
        },
        a.out,
    )
    return 0


def cmd_serve(a) -> int:
    if a.trace is None or a.out is None:
        raise UsageError("serve needs --trace and --out")
    metrics = a.metrics or str(Path(a.out).with_suffix(".metrics.jsonl"))
    try:
        cfg = ServiceConfig(
            trace_path=Path(a.trace),
            recommendation_path=Path(a.out),
            metrics_path=Path(metrics),
            tuner_state_path=Path(a.tuner_state) if a.tuner_state else None,
            run_interval_seconds=a.run_interval,
            recommendation_horizon_intervals=a.horizon,
            default_pool_size=a.default_pool,
            target_wait_seconds=a.target_wait,
            pipeline=_pipeline_config(a),
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    try:
        run_service(cfg, max_cycles=a.max_cycles)
    except ValueError as e:
        raise UsageError(str(e)) from e
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="warmpool", description="Warm-pool sizing: simulate, optimize, forecast, serve.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-trace", help="write a synthetic demand trace CSV")
    _add(p, "--pattern", choices=["diurnal", "hourly_spikes", "sporadic_spikes", "constant"], default="diurnal")
    _add(p, "--horizon", type=int, default=2880)
    _add(p, "--period", type=int, default=2880)
    _add(p, "--base-rate", type=float, default=1.0)
    _add(p, "--peak-rate", type=float, default=10.0)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--interval-seconds", type=int, default=30)
    _add(p, "--start-time", type=int, default=0)
    _add(p, "--out", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("simulate", help="replay a schedule against a trace")
    _add(p, "--trace")
    _add(p, "--pool", type=int, default=None, help="constant pool size")
    _add(p, "--schedule", default=None, help="recommendation JSON file")
    _add(p, "--tau", type=int, default=4)
    _add(p, "--miss-policy", choices=["fcfs", "on_demand"], default="fcfs")
    _add(p, "--events", default=None, help="write the event log CSV here")
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("optimize", help="solve the LP on a trace treated as known demand")
    _add(p, "--trace")
    _optimizer_flags(p)
    _add(p, "--dump-lp", default=None)
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("forecast", help="forecast demand after the end of a trace")
    _add(p, "--trace")
    _add(p, "--horizon", type=int, default=120)
    _add(p, "--seed", type=int, default=0)
    _add(p, "--window-length", type=int, default=150)
    _add(p, "--alpha-prime-loss", type=float, default=0.9, help="quantile targeted by the corrector loss")
    _add(p, "--baseline", action="store_true", default=False)
    _add(p, "--gamma", type=float, default=1.0)
    _add(p, "--model-out", default=None)
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("recommend", help="one pipeline run: recommendation for the next horizon")
    _add(p, "--trace")
    _pipeline_flags(p)
    _add(p, "--out", default=None)
    p.set_defaults(func=cmd_recommend)

    for name, fn, helptext in (
        ("sweep", cmd_sweep, "Pareto sweep over alpha_prime on a held-out tail"),
        ("compare-static", cmd_compare_static, "dynamic pipeline vs best static pool at a hit-rate target"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add(p, "--trace")
        _pipeline_flags(p)
        _add(p, "--test-intervals", type=int, default=2880, help="held-out tail length")
        if name == "sweep":
            _add(p, "--alphas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")
        else:
            _add(p, "--target-hit-rate", type=float, default=0.99)
        _add(p, "--out", default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("serve", help="run the recommendation loop")
    _add(p, "--trace")
    _pipeline_flags(p)
    _add(p, "--out", help="recommendation file")
    _add(p, "--metrics", default=None, help="metrics JSONL (default: next to --out)")
    _add(p, "--tuner-state", default=None)
    _add(p, "--run-interval", type=int, default=1800)
    _add(p, "--target-wait", type=float, default=None, help="target average wait in seconds; enables tuning")
    _add(p, "--default-pool", type=int, default=0)
    _add(p, "--max-cycles", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return ap


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)  # exits with status 2 on bad flags
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return a.func(a)
    except UsageError as e:
        return _fail(2, "usage", e)
    except Exception as e:
        return _fail(1, "runtime", e)


if __name__ == "__main__":
    sys.exit(main())
