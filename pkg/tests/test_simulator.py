import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import curve_areas, fcfs_replay
from warmpool.optimizer import OptimizerConfig, evaluate_schedule
from warmpool.schedule import PoolSchedule
from warmpool.simulator import SimulatorConfig, simulate, write_event_log
from warmpool.trace import DemandTrace

counts_st = st.lists(st.integers(0, 4), min_size=1, max_size=25)


def conserved(r):
    return r.initial_clusters + r.hydrations_requested == (
        r.consumed + r.evicted + r.cancelled + r.idle_at_end + r.in_flight_at_end
    )


def test_zero_demand():
    r = simulate(DemandTrace([0] * 10), PoolSchedule.constant(2, 10), SimulatorConfig(tau_intervals=3))
    assert (r.total_idle_intervals, r.total_wait_intervals, r.hit_rate) == (20, 0, 1.0)
    assert r.total_requests == 0 and r.average_wait() == 0.0


def test_hand_replay_all_hits():
    # D = [0,1,1,1,2,2], A' = [1,1,1,2,2,2]: idle at t = 0 and t = 3
    r = simulate(DemandTrace([0, 1, 0, 0, 1, 0]), PoolSchedule.constant(1, 6), SimulatorConfig(tau_intervals=2))
    assert r.total_idle_intervals == 2 and r.total_wait_intervals == 0
    assert r.per_request_wait.tolist() == [0, 0] and r.hit_rate == 1.0
    assert r.curves.A_ready.tolist() == [1, 1, 1, 2, 2, 2]


def test_hand_replay_with_queue():
    # two arrivals at t=1 with one ready cluster: the second waits until t=3
    r = simulate(DemandTrace([0, 2, 0, 0, 0, 0]), PoolSchedule.constant(1, 6), SimulatorConfig(tau_intervals=2))
    assert r.per_request_wait.tolist() == [0, 2]
    assert r.total_wait_intervals == 2 and r.total_idle_intervals == 4
    assert (r.hit_count, r.miss_count, r.hit_rate) == (1, 1, 0.5)


def test_on_demand_empty_pool_waits_tau():
    r = simulate(DemandTrace([3, 0, 1, 2, 0, 0, 0, 0]), PoolSchedule.constant(0, 8),
                 SimulatorConfig(tau_intervals=3, miss_policy="on_demand"))
    assert np.all(r.per_request_wait == 3)
    assert r.total_idle_intervals == 0 and r.hit_count == 0
    assert r.on_demand_created == 6


def test_on_demand_hits_refill_pool():
    r = simulate(DemandTrace([1, 1, 0, 0]), PoolSchedule.constant(1, 4), SimulatorConfig(tau_intervals=2, miss_policy="on_demand"))
    # t0 hit (refill ready at t2), t1 miss waits tau; the refill is idle at t2 and t3
    assert r.per_request_wait.tolist() == [0, 2]
    assert r.total_idle_intervals == 2 and conserved(r)


def test_schedule_increase_and_shrink():
    tr = DemandTrace([0] * 8)
    s = PoolSchedule([1, 1, 3, 3, 0, 0, 0, 0], block_length=2)
    r = simulate(tr, s, SimulatorConfig(tau_intervals=3, record_events=True))
    # +2 requested at t2 (ready t5) is cancelled at t4 along with evicting the idle one
    assert r.hydrations_requested == 2 and r.evicted == 1 and r.cancelled == 2
    assert r.total_idle_intervals == 4 and conserved(r)
    kinds = {e[1] for e in r.events}
    assert {"hydrate_request", "evict", "cancel"} <= kinds


def test_clusters_owed_to_queue_are_not_cancelled():
    tr = DemandTrace([3, 0, 0, 0])
    s = PoolSchedule([2, 2, 0, 0], block_length=2)
    r = simulate(tr, s, SimulatorConfig(tau_intervals=3))
    assert r.cancelled == 2  # three in flight, one owed to the queued request
    assert r.per_request_wait.tolist() == [0, 0, 3]
    assert conserved(r)


def test_errors():
    with pytest.raises(ValueError):
        simulate(DemandTrace([1, 2]), PoolSchedule.constant(1, 3), SimulatorConfig())
    with pytest.raises(ValueError):
        simulate(DemandTrace([1]), PoolSchedule([0.5]), SimulatorConfig())
    with pytest.raises(ValueError):
        simulate(DemandTrace([1]), PoolSchedule([4.0], max_pool=3), SimulatorConfig())
    with pytest.raises(ValueError):
        SimulatorConfig(tau_intervals=0)
    with pytest.raises(ValueError):
        SimulatorConfig(miss_policy="lifo")


def test_event_log(tmp_path):
    r = simulate(DemandTrace([0, 2, 0, 0]), PoolSchedule.constant(1, 4), SimulatorConfig(tau_intervals=1, record_events=True))
    p = tmp_path / "ev.csv"
    write_event_log(r, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "interval,event,detail"
    assert "1,arrival,2" in lines and "1,hit,1" in lines and "1,miss,1" in lines and "2,cluster_ready,2" in lines


@given(counts_st, st.integers(0, 5), st.integers(1, 4))
def test_area_identity_with_lp_evaluation(counts, n, tau):
    tr = DemandTrace(counts)
    sched = PoolSchedule.constant(n, len(counts))
    r = simulate(tr, sched, SimulatorConfig(tau_intervals=tau))
    idle, wait, _, _ = evaluate_schedule(tr, sched, OptimizerConfig(tau_intervals=tau))
    assert (r.total_idle_intervals, r.total_wait_intervals) == (idle, wait)
    assert (idle, wait) == curve_areas(counts, [n] * len(counts), tau)


@given(counts_st, st.integers(0, 5), st.integers(1, 4))
def test_fcfs_matches_per_request_replay(counts, n, tau):
    r = simulate(DemandTrace(counts), PoolSchedule.constant(n, len(counts)), SimulatorConfig(tau_intervals=tau))
    idle, wait, waits = fcfs_replay(counts, n, tau)
    assert r.per_request_wait.tolist() == waits
    assert (r.total_idle_intervals, r.total_wait_intervals) == (idle, wait)


@given(counts_st, st.integers(0, 5), st.integers(1, 4))
def test_monotone_in_pool_size(counts, n, tau):
    tr = DemandTrace(counts)
    cfg = SimulatorConfig(tau_intervals=tau)
    a = simulate(tr, PoolSchedule.constant(n, len(counts)), cfg)
    b = simulate(tr, PoolSchedule.constant(n + 1, len(counts)), cfg)
    assert b.total_wait_intervals <= a.total_wait_intervals
    assert b.total_idle_intervals >= a.total_idle_intervals


@given(counts_st, st.data(), st.integers(1, 4), st.sampled_from(["fcfs", "on_demand"]))
def test_report_invariants_time_varying(counts, data, tau, policy):
    T = len(counts)
    block = data.draw(st.integers(1, 4))
    nb = -(-T // block)
    vals = data.draw(st.lists(st.integers(0, 4), min_size=nb, max_size=nb))
    r = simulate(DemandTrace(counts), PoolSchedule.from_blocks(vals, T, block), SimulatorConfig(tau, policy))
    assert r.hit_count + r.miss_count == sum(counts)
    assert r.hit_rate == (r.hit_count / sum(counts) if sum(counts) else 1.0)
    assert np.count_nonzero(r.per_request_wait == 0) == r.hit_count
    assert np.all(r.per_request_wait >= 0)
    assert r.total_idle_intervals >= 0 and r.total_wait_intervals >= 0
    assert conserved(r)


@given(counts_st, st.integers(0, 4), st.integers(1, 4))
def test_waiting_requests_found_empty_pool(counts, n, tau):
    """A request that waits arrived when no ready cluster was left for it."""
    tr = DemandTrace(counts)
    r = simulate(tr, PoolSchedule.constant(n, len(counts)), SimulatorConfig(tau_intervals=tau))
    cum = np.cumsum(counts)
    first_id = np.concatenate([[0], cum[:-1]])
    for t, c in enumerate(counts):
        waits = r.per_request_wait[first_id[t] : first_id[t] + c]
        if np.any(waits > 0):
            # ready supply at t was below demand by t: pool empty at that arrival
            assert r.curves.A_ready[t] < cum[t]
