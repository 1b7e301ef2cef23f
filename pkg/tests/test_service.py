import json
import os

import numpy as np
import pytest

from warmpool.autotuner import TunerState, load_state, save_state
from warmpool.pipeline import PipelineConfig, Recommendation
from warmpool.schedule import PoolSchedule
from warmpool.service import (
    ServiceConfig,
    active_pool_size,
    backtest,
    read_recommendation,
    recommendation_document,
    run_service,
    schedule_values,
    write_json_atomic,
)
from warmpool.trace import DemandTrace, write_trace


class FakeClock:
    def __init__(self, t=100_000.0):
        self.t = t
        self.sleeps = []

    def __call__(self):
        return self.t

    def sleep(self, s):
        self.sleeps.append(s)
        self.t += s


def growing_reader(clock, seed=0):
    """A trace that has observed demand up to the clock's current time."""
    full = np.random.default_rng(seed).poisson(2, 20_000)

    def read(_path):
        return DemandTrace(full[: int(clock() // 30)])

    return read


def fake_recommender(size=3, fail_on=()):
    calls = {"n": 0}

    def rec(trace, cfg):
        calls["n"] += 1
        if calls["n"] in fail_on:
            raise RuntimeError("injected failure")
        sched = PoolSchedule.constant(size, cfg.horizon_intervals, interval_seconds=trace.interval_seconds)
        return Recommendation(trace.end_time, cfg.horizon_intervals, sched, cfg.mode, cfg.optimizer.alpha_prime)

    return rec


@pytest.fixture
def svc(tmp_path):
    trace = tmp_path / "trace.csv"
    write_trace(DemandTrace(np.random.default_rng(0).poisson(2, 400)), trace)
    return ServiceConfig(
        trace_path=trace,
        recommendation_path=tmp_path / "rec.json",
        metrics_path=tmp_path / "metrics.jsonl",
        default_pool_size=7,
    )


def metrics(cfg):
    return [json.loads(line) for line in cfg.metrics_path.read_text().splitlines()]


def test_config_validation(tmp_path):
    base = dict(trace_path=tmp_path / "t", recommendation_path=tmp_path / "r", metrics_path=tmp_path / "m")
    with pytest.raises(ValueError):
        ServiceConfig(**base, run_interval_seconds=3600, recommendation_horizon_intervals=120)
    with pytest.raises(ValueError):
        ServiceConfig(**base, default_pool_size=-1)
    cfg = ServiceConfig(**base, recommendation_horizon_intervals=240, pipeline=PipelineConfig())
    assert cfg.pipeline.horizon_intervals == 240


def test_healthy_cycles(svc):
    clock = FakeClock()
    n = run_service(svc, clock, clock.sleep, fake_recommender(), growing_reader(clock), max_cycles=3)
    assert n == 3
    m = metrics(svc)
    assert [r["status"] for r in m] == ["succeeded"] * 3
    ts = [r["timestamp"] for r in m]
    assert ts == sorted(ts) and len(set(ts)) == 3
    assert clock.sleeps == [1800.0, 1800.0]
    doc = read_recommendation(svc.recommendation_path)
    assert doc["horizon_intervals"] == 120 and set(schedule_values(doc)) == {3}
    # the second cycle backtests the first recommendation against the trace
    assert m[1]["pool_hit_count"] + m[1]["pool_miss_count"] > 0
    assert m[0]["hit_rate"] is None and 0.0 <= m[1]["hit_rate"] <= 1.0


def test_single_failure_keeps_previous_file(svc):
    clock = FakeClock()
    run_service(svc, clock, clock.sleep, fake_recommender(fail_on=(2,)), max_cycles=2)
    before = svc.recommendation_path.read_text()
    assert json.loads(before)["source_mode"] == "two_step"
    m = metrics(svc)
    assert [r["status"] for r in m] == ["succeeded", "failed"]
    assert "injected failure" in m[1]["error"]


def test_two_failures_write_default(svc):
    clock = FakeClock()
    run_service(svc, clock, clock.sleep, fake_recommender(fail_on=(2, 3)), max_cycles=3)
    doc = read_recommendation(svc.recommendation_path)
    assert doc["source_mode"] == "fallback_default"
    assert set(schedule_values(doc)) == {7}
    m = metrics(svc)
    assert [r["status"] for r in m] == ["succeeded", "failed", "failed"]
    assert m[2]["source_mode"] == "fallback_default"


def test_recovery_resets_failure_count(svc):
    clock = FakeClock()
    run_service(svc, clock, clock.sleep, fake_recommender(fail_on=(1, 3)), max_cycles=3)
    assert read_recommendation(svc.recommendation_path)["source_mode"] == "two_step"


def test_unreadable_trace_is_a_failed_cycle(svc, tmp_path):
    cfg = ServiceConfig(trace_path=tmp_path / "missing.csv", recommendation_path=svc.recommendation_path,
                        metrics_path=svc.metrics_path)
    clock = FakeClock()
    run_service(cfg, clock, clock.sleep, fake_recommender(), max_cycles=2)
    assert [r["status"] for r in metrics(cfg)] == ["failed", "failed"]
    assert read_recommendation(cfg.recommendation_path)["source_mode"] == "fallback_default"


def test_missing_output_directory(tmp_path):
    cfg = ServiceConfig(trace_path=tmp_path / "t", recommendation_path=tmp_path / "no" / "r.json",
                        metrics_path=tmp_path / "m")
    with pytest.raises(ValueError):
        run_service(cfg, max_cycles=1)


def test_tuner_state_persists(svc, tmp_path):
    sp = tmp_path / "tuner.json"
    save_state(TunerState(5.0, 0.4), sp)
    cfg = ServiceConfig(trace_path=svc.trace_path, recommendation_path=svc.recommendation_path,
                        metrics_path=svc.metrics_path, tuner_state_path=sp, target_wait_seconds=20.0)
    clock = FakeClock()
    run_service(cfg, clock, clock.sleep, fake_recommender(), growing_reader(clock), max_cycles=3)
    st = load_state(sp)
    assert st.target_wait == 20.0
    assert len(st.history) == 2  # cycles 2 and 3 backtest their predecessor
    assert metrics(cfg)[0]["alpha_prime"] == 0.4


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "rec.json"
    write_json_atomic(p, {"a": 1})
    write_json_atomic(p, {"a": 2})
    assert json.loads(p.read_text()) == {"a": 2}
    assert os.listdir(tmp_path) == ["rec.json"]

    class Bad:
        pass

    with pytest.raises(TypeError):
        write_json_atomic(p, {"a": Bad()})
    assert json.loads(p.read_text()) == {"a": 2}
    assert os.listdir(tmp_path) == ["rec.json"]


def test_document_and_active_pool_size():
    sched = PoolSchedule(np.repeat([1, 4, 2], 10), 10)
    doc = recommendation_document(sched, 1000, 0.5, "two_step")
    assert [b["pool_size"] for b in doc["schedule"]] == [1, 4, 2]
    assert [b["block_start_interval"] for b in doc["schedule"]] == [0, 10, 20]
    assert active_pool_size(doc, 999) is None
    assert active_pool_size(doc, 1000) == 1
    assert active_pool_size(doc, 1000 + 10 * 30) == 4
    assert active_pool_size(doc, 1000 + 30 * 30 - 1) == 2
    assert active_pool_size(doc, 1000 + 30 * 30) is None
    with pytest.raises(ValueError):
        recommendation_document(PoolSchedule(np.full(10, 1.5), 10), 0, 0.5, "x")


def test_backtest_window():
    tr = DemandTrace([0, 0, 2, 0, 0, 0], start_time=0)
    doc = recommendation_document(PoolSchedule.constant(1, 10, block_length=1), 60, 0.5, "x")
    rep = backtest(doc, tr, 2)
    assert rep.curves.D.size == 4 and rep.hit_count == 1 and rep.miss_count == 1
    late = recommendation_document(PoolSchedule.constant(1, 10, block_length=1), 600, 0.5, "x")
    assert backtest(late, tr, 2) is None
