import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_lp, curve_areas
from warmpool.optimizer import (
    LpSolution,
    OptimizerConfig,
    SolverError,
    build_lp,
    dump_lp,
    evaluate_schedule,
    optimize,
    round_schedule,
    smooth_schedule,
    solve,
)
from warmpool.schedule import PoolSchedule
from warmpool.trace import DemandTrace

small = st.lists(st.integers(0, 3), min_size=1, max_size=7)


def cfg(**kw):
    base = dict(alpha_prime=0.5, tau_intervals=1, min_pool=0, max_pool=3, stableness_intervals=1)
    base.update(kw)
    return OptimizerConfig(**base)


def test_config_validation_and_legacy_weights():
    c = OptimizerConfig(legacy_alpha=3.0, legacy_beta=1.0)
    assert c.alpha_prime == 0.75 and c.weights == (3.0, 1.0)
    assert OptimizerConfig(alpha_prime=0.2).weights == (0.2, 0.8)
    for bad in (dict(alpha_prime=1.5), dict(min_pool=5, max_pool=2), dict(tau_intervals=0),
                dict(stableness_intervals=0), dict(max_new_request=0), dict(legacy_alpha=1.0)):
        with pytest.raises(ValueError):
            OptimizerConfig(**bad)


def test_build_lp_shape_t6():
    p = build_lp(DemandTrace([0, 1, 0, 0, 1, 0]), cfg(max_new_request=2))
    assert p.n_blocks == 6 and p.n_variables == 18
    counts = p.constraint_counts()
    assert counts == {"idle_lower": 6, "wait_lower": 6, "ramp": 5, "shift": 6, "box": 12}
    assert counts["shift"] + counts["idle_lower"] + counts["wait_lower"] + counts["ramp"] + counts["box"] == 35


def test_build_lp_single_block_and_weights():
    p = build_lp(np.array([1.0, 2, 3]), cfg(stableness_intervals=3, alpha_prime=1.0))
    assert p.n_blocks == 1
    assert np.all(p.c[1 + 3 :] == 0)  # alpha' = 1 drops the wait term
    with pytest.raises(ValueError):
        build_lp(np.array([]), cfg())
    with pytest.raises(ValueError):
        build_lp(np.array([1.0, -1.0]), cfg())


def test_horizon_shorter_than_tau():
    sol = optimize(np.array([2.0, 1.0]), cfg(tau_intervals=5, max_pool=10))
    # only N(0) is ever ready; it must cover D = [2, 3] at alpha' = 0.5 -> any value in [2, 3]
    assert 2 <= sol.schedule.values[0] <= 3
    assert sol.objective == pytest.approx(0.5)  # one unit of wait or idle at weight 0.5


def test_zero_demand_cases():
    s1 = optimize(np.zeros(8), cfg(alpha_prime=1.0))
    assert np.all(s1.schedule.values == 0) and s1.objective == 0
    s0 = optimize(np.zeros(8), cfg(alpha_prime=0.0, min_pool=1))
    assert np.all(s0.schedule.values == 1) and s0.objective == 0


def test_t6_matches_enumeration():
    d = [0, 1, 0, 0, 1, 0]
    best, _ = brute_force_lp(d, 1, 0, 3, 1, 0.5, 0.5)
    assert best == 0.5
    for method in ("exact", "highs"):
        assert solve(build_lp(np.array(d, float), cfg()), method=method).objective == pytest.approx(best, abs=1e-9)


def _oracle_case(data):
    T = data.draw(st.integers(1, 8))
    d = data.draw(st.lists(st.integers(0, 3), min_size=T, max_size=T))
    tau = data.draw(st.sampled_from([1, 2]))
    mx = data.draw(st.integers(1, 3))
    block = data.draw(st.sampled_from([1, T]))
    a = data.draw(st.sampled_from([0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]))
    return d, tau, mx, block, a


@given(st.data())
def test_exact_solver_vs_enumeration(data):
    d, tau, mx, block, a = _oracle_case(data)
    c = cfg(alpha_prime=a, tau_intervals=tau, max_pool=mx, stableness_intervals=block)
    best, _ = brute_force_lp(d, tau, 0, mx, block, a, 1 - a)
    sol = optimize(np.array(d, float), c)
    assert sol.objective <= best + 1e-9
    if block == len(d):
        assert sol.objective == pytest.approx(best, abs=1e-9)


@given(st.data())
def test_highs_agrees_with_exact(data):
    d, tau, mx, block, a = _oracle_case(data)
    p = build_lp(np.array(d, float), cfg(alpha_prime=a, tau_intervals=tau, max_pool=mx, stableness_intervals=block))
    assert solve(p, method="highs").objective == pytest.approx(solve(p, method="exact").objective, abs=1e-9)


@given(st.data())
def test_ramp_limited_vs_enumeration(data):
    T = data.draw(st.integers(2, 6))
    d = data.draw(st.lists(st.integers(0, 3), min_size=T, max_size=T))
    a = data.draw(st.sampled_from([0.1, 0.5, 0.9]))
    c = cfg(alpha_prime=a, max_new_request=1)
    sol = optimize(np.array(d, float), c)
    assert sol.schedule.violations(1) == []
    # brute force over ramp-feasible integer schedules
    import itertools

    best = min(
        a * curve_areas(d, list(v), 1)[0] + (1 - a) * curve_areas(d, list(v), 1)[1]
        for v in itertools.product(range(4), repeat=T)
        if all(v[i] - v[i - 1] <= 1 for i in range(1, T))
    )
    assert sol.objective <= best + 1e-9


def test_exact_rejects_ramp_and_unknown_method():
    p = build_lp(np.ones(4), cfg(max_new_request=1))
    with pytest.raises(ValueError):
        solve(p, method="exact")
    with pytest.raises(ValueError):
        solve(p, method="simplex")


@given(small, st.sampled_from([0.0, 0.25, 0.5, 1.0]), st.integers(1, 3))
def test_solution_invariants(d, a, tau):
    sol = optimize(np.array(d, float), cfg(alpha_prime=a, tau_intervals=tau))
    assert np.all(np.minimum(sol.delta_plus, sol.delta_minus) == 0)
    assert np.all(sol.delta_plus >= 0) and np.all(sol.delta_minus >= 0)
    assert sol.objective == pytest.approx(a * sol.total_idle + (1 - a) * sol.total_wait, abs=1e-9)
    assert sol.schedule.violations() == []
    assert sol.rounded_schedule.is_integral() and sol.rounded_schedule.violations() == []


@given(st.data())
def test_scalarization_equivalence(data):
    d, tau, mx, block, _ = _oracle_case(data)
    alpha = data.draw(st.floats(0.1, 10))
    beta = data.draw(st.floats(0.1, 10))
    base = dict(tau_intervals=tau, max_pool=mx, stableness_intervals=block)
    legacy = optimize(np.array(d, float), cfg(legacy_alpha=alpha, legacy_beta=beta, **base))
    primed = optimize(np.array(d, float), cfg(alpha_prime=alpha / (alpha + beta), **base))
    assert legacy.objective == pytest.approx((alpha + beta) * primed.objective, abs=1e-9)


@given(st.lists(st.integers(0, 6), min_size=2, max_size=40), st.integers(1, 4), st.integers(1, 5))
def test_pareto_monotone_random(d, tau, block):
    prev = None
    for a in np.linspace(0, 1, 11):
        s = optimize(np.array(d, float), cfg(alpha_prime=a, tau_intervals=tau, stableness_intervals=block, max_pool=50))
        if prev is not None:
            assert s.total_idle <= prev.total_idle + 1e-9
            assert s.total_wait >= prev.total_wait - 1e-9
        prev = s


def test_evaluate_schedule_examples():
    c = OptimizerConfig(tau_intervals=3)
    idle, wait, dp, dm = evaluate_schedule(np.zeros(10), PoolSchedule.constant(2, 10), c)
    assert (idle, wait) == (20, 0)
    idle, wait, dp, dm = evaluate_schedule(np.array([0, 1, 0, 0, 1, 0.0]), PoolSchedule.constant(1, 6), OptimizerConfig(tau_intervals=2))
    assert dp.tolist() == [1, 0, 0, 1, 0, 0] and dm.tolist() == [0] * 6
    with pytest.raises(ValueError):
        evaluate_schedule(np.zeros(3), PoolSchedule.constant(1, 4), c)


@given(small, st.integers(0, 3), st.integers(1, 3))
def test_unit_shift_bound(d, n, tau):
    c = OptimizerConfig(tau_intervals=tau)
    T = len(d)
    i0, w0, _, _ = evaluate_schedule(np.array(d, float), PoolSchedule.constant(n, T), c)
    i1, w1, _, _ = evaluate_schedule(np.array(d, float), PoolSchedule.constant(n + 1, T), c)
    assert 0 <= i1 - i0 <= T and 0 <= w0 - w1 <= T


def _sol_with_blocks(values, block, **kw):
    c = OptimizerConfig(stableness_intervals=block, **kw)
    T = len(values) * block
    sched = PoolSchedule.from_blocks(values, T, block, min_pool=c.min_pool, max_pool=c.max_pool)
    z = np.zeros(T)
    return LpSolution(sched, sched, 0.0, z, z, None, c)


def test_round_schedule_examples():
    assert round_schedule(_sol_with_blocks([1.2, 2.0, 0.1], 2)).block_values().tolist() == [2, 2, 1]
    assert round_schedule(_sol_with_blocks([1.0, 3.0], 2)).block_values().tolist() == [1, 3]
    assert round_schedule(_sol_with_blocks([4.5, 0.0], 1, max_pool=4)).block_values().tolist() == [4, 0]
    ramp = round_schedule(_sol_with_blocks([0.0, 3.2, 3.0], 1, max_new_request=1))
    assert ramp.block_values().tolist() == [0, 1, 2] and ramp.violations(1) == []


def test_smooth_schedule_examples():
    s = PoolSchedule([0, 5, 0, 0])
    assert smooth_schedule(s, 2).values.tolist() == [5, 5, 5, 0]
    assert smooth_schedule(PoolSchedule.constant(3, 6), 4).values.tolist() == [3] * 6
    # tau = 1 rounds to a radius of one interval
    assert smooth_schedule(PoolSchedule([0, 0, 7, 0, 0]), 1).values.tolist() == [0, 7, 7, 7, 0]
    with pytest.raises(ValueError):
        smooth_schedule(s, 0)


@given(st.lists(st.integers(0, 9), min_size=1, max_size=8), st.integers(1, 3), st.integers(1, 6))
def test_smooth_schedule_dominates_and_keeps_blocks(vals, block, tau):
    T = len(vals) * block
    s = PoolSchedule.from_blocks(vals, T, block)
    out = smooth_schedule(s, tau, max_new_request=2)
    assert np.all(out.values >= s.values)
    assert out.violations(2) == []


def test_solver_error_names_family():
    e = SolverError("LP infeasible", "ramp")
    assert e.family == "ramp" and "ramp" in str(e)


def test_dump_lp(tmp_path):
    p = build_lp(np.array([0, 1, 0.0]), cfg(max_new_request=1))
    path = tmp_path / "lp.txt"
    dump_lp(p, path)
    text = path.read_text().splitlines()
    assert text[0].startswith("# variables 9")
    assert text[1].startswith("minimize")
    assert sum(line.startswith("ramp:") for line in text) == 2
    assert sum(line.startswith("bound") for line in text) == 9


def test_week_scale_solve_is_fast():
    import time

    d = np.random.default_rng(0).poisson(5, size=20160).astype(float)
    t0 = time.perf_counter()
    sol = optimize(d, OptimizerConfig(max_pool=200))
    assert time.perf_counter() - t0 < 5.0
    assert sol.schedule.violations() == []
