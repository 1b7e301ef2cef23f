"""Sample-average-approximation LP for the optimal warm-pool schedule.

Decision variables are one pool size per stability block plus an idle
surplus and a wait deficit per interval. Ready supply at interval ``t`` is the
initial pool for ``t < tau`` and ``D(t - tau) + N(t - tau)`` afterwards, so
every constraint is linear in the block pool sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .schedule import CumulativeCurves, PoolSchedule, block_index, n_blocks, ready_curve
from .trace import DemandTrace, max_filter


class SolverError(RuntimeError):
    """The LP was infeasible or unbounded; ``family`` names the suspect constraints."""

    def __init__(self, message: str, family: str):
        self.family = family
        super().__init__(f"{message} (constraint family: {family})")


@dataclass(frozen=True)
class OptimizerConfig:
    alpha_prime: float = 0.5
    tau_intervals: int = 4
    min_pool: int = 0
    max_pool: int = 100
    stableness_intervals: int = 10
    max_new_request: float | None = None
    legacy_alpha: float | None = None
    legacy_beta: float | None = None

    def __post_init__(self):
        if (self.legacy_alpha is None) != (self.legacy_beta is None):
            raise ValueError("legacy_alpha and legacy_beta go together")
        if self.legacy_alpha is not None:
            if self.legacy_alpha <= 0 or self.legacy_beta <= 0:
                raise ValueError("legacy weights must be positive")
            object.__setattr__(
                self, "alpha_prime", self.legacy_alpha / (self.legacy_alpha + self.legacy_beta)
            )
        if not 0.0 <= self.alpha_prime <= 1.0:
            raise ValueError("alpha_prime must lie in [0, 1]")
        if self.tau_intervals < 1:
            raise ValueError("tau_intervals must be >= 1")
        if self.min_pool < 0 or self.min_pool > self.max_pool:
            raise ValueError("need 0 <= min_pool <= max_pool")
        if self.stableness_intervals < 1:
            raise ValueError("stableness_intervals must be >= 1")
        if self.max_new_request is not None and self.max_new_request <= 0:
            raise ValueError("max_new_request must be positive or None (unbounded)")

    @property
    def weights(self) -> tuple[float, float]:
        """(idle weight, wait weight) of the objective actually optimized."""
        if self.legacy_alpha is not None:
            return (self.legacy_alpha, self.legacy_beta)
        return (self.alpha_prime, 1.0 - self.alpha_prime)

    def with_alpha(self, alpha_prime: float) -> "OptimizerConfig":
        return OptimizerConfig(
            alpha_prime,
            self.tau_intervals,
            self.min_pool,
            self.max_pool,
            self.stableness_intervals,
            self.max_new_request,
        )


@dataclass
class LpProblem:
    """Inequality-form LP ``min c.x  s.t.  A_ub x <= b_ub, bounds``.

    Variable order: block pool sizes, then idle surpluses, then wait deficits.
    ``shift`` and ``shift_offset`` express ready supply as ``shift @ N + shift_offset``.
    """

    c: np.ndarray
    A_ub: sp.csr_matrix
    b_ub: np.ndarray
    bounds: list[tuple[float, float | None]]
    horizon: int
    n_blocks: int
    block_length: int
    demand: np.ndarray
    config: OptimizerConfig
    shift: sp.csr_matrix
    shift_offset: np.ndarray
    ready_block: np.ndarray
    interval_seconds: int = 30
    row_families: list[tuple[str, int, int]] = field(default_factory=list)

    @property
    def n_variables(self) -> int:
        return self.c.size

    def constraint_counts(self) -> dict[str, int]:
        counts = {name: hi - lo for name, lo, hi in self.row_families}
        counts["shift"] = self.horizon
        counts["box"] = 2 * self.n_blocks
        return counts

    def family_of_row(self, row: int) -> str:
        for name, lo, hi in self.row_families:
            if lo <= row < hi:
                return name
        return "bounds"


@dataclass
class LpSolution:
    schedule: PoolSchedule
    rounded_schedule: PoolSchedule
    objective: float
    delta_plus: np.ndarray
    delta_minus: np.ndarray
    curves: CumulativeCurves
    config: OptimizerConfig

    @property
    def total_idle(self) -> float:
        return float(self.delta_plus.sum())

    @property
    def total_wait(self) -> float:
        return float(self.delta_minus.sum())


def _increments(demand) -> tuple[np.ndarray, int]:
    if isinstance(demand, DemandTrace):
        return demand.counts.astype(float), demand.interval_seconds
    d = np.asarray(demand, dtype=float)
    if d.ndim != 1:
        raise ValueError("demand must be one-dimensional")
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError("demand increments must be finite and non-negative")
    return d, 30


def build_lp(demand: DemandTrace | np.ndarray, config: OptimizerConfig) -> LpProblem:
    """Assemble the LP for per-interval demand increments ``demand``."""
    inc, interval_seconds = _increments(demand)
    T = inc.size
    if T == 0:
        raise ValueError("demand must cover at least one interval")
    S, tau = config.stableness_intervals, config.tau_intervals
    nb = n_blocks(T, S)
    D = np.cumsum(inc)
    blk = block_index(T, S)

    # ready supply A'(t) = N[src(t)] + offset(t)
    t = np.arange(T)
    src = np.where(t < tau, 0, t - tau)
    offset = np.where(t < tau, 0.0, D[np.maximum(t - tau, 0)])
    shift = sp.csr_matrix((np.ones(T), (t, blk[src])), shape=(T, nb))

    nv = nb + 2 * T
    ip, im = nb, nb + T  # first idle / wait variable
    rows, cols, vals = [], [], []
    # idle: A' - D - d+ <= 0
    rows += [t, t]
    cols += [blk[src], ip + t]
    vals += [np.ones(T), -np.ones(T)]
    # wait: D - A' - d- <= 0
    rows += [T + t, T + t]
    cols += [blk[src], im + t]
    vals += [-np.ones(T), -np.ones(T)]
    b = [D - offset, offset - D]
    families = [("idle_lower", 0, T), ("wait_lower", T, 2 * T)]
    if nb > 1:
        r = 2 * T + np.arange(nb - 1)
        k = np.arange(1, nb)
        rows += [r, r]
        cols += [k, k - 1]
        vals += [np.ones(nb - 1), -np.ones(nb - 1)]
        ramp = math.inf if config.max_new_request is None else float(config.max_new_request)
        b.append(np.full(nb - 1, ramp))
        families.append(("ramp", 2 * T, 2 * T + nb - 1))
    n_rows = families[-1][2]
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_rows, nv)
    )
    w_idle, w_wait = config.weights
    c = np.concatenate([np.zeros(nb), np.full(T, w_idle), np.full(T, w_wait)])
    bounds = [(float(config.min_pool), float(config.max_pool))] * nb + [(0.0, None)] * (2 * T)
    return LpProblem(
        c=c,
        A_ub=A,
        b_ub=np.concatenate(b),
        bounds=bounds,
        horizon=T,
        n_blocks=nb,
        block_length=S,
        demand=inc,
        config=config,
        shift=shift,
        shift_offset=offset,
        ready_block=blk[src],
        interval_seconds=interval_seconds,
        row_families=families,
    )


def _linprog(c, problem: LpProblem, A_extra=None, b_extra=None):
    A, b = problem.A_ub, problem.b_ub
    finite = np.isfinite(b)
    if not finite.all():
        A, b = A[finite], b[finite]
    if A_extra is not None:
        A = sp.vstack([A, A_extra], format="csr")
        b = np.concatenate([b, b_extra])
    return linprog(c, A_ub=A, b_ub=b, bounds=problem.bounds, method="highs-ds")


def _raise_for(res, problem: LpProblem):
    if res.status == 2:
        family = "bounds"
        lhs = getattr(res, "ineqlin", None)
        if lhs is not None and lhs.residual is not None and np.size(lhs.residual):
            family = problem.family_of_row(int(np.argmin(lhs.residual)))
        raise SolverError("LP infeasible", family)
    if res.status == 3:
        raise SolverError("LP unbounded", "objective")
    raise SolverError(f"LP solver failed: {res.message}", "solver")


def solve(problem: LpProblem, tie_break: bool = True, method: str = "auto") -> LpSolution:
    """Solve to optimality; among optimal schedules prefer the smallest pool.

    ``method="exact"`` exploits the fact that each interval's surplus and
    deficit depend on a single block's pool size: without a ramp limit the
    program separates into one weighted-quantile problem per block, solved in
    closed form. ``method="highs"`` hands the full LP to HiGHS (dual simplex)
    followed by a second pass that minimizes total pool size over the optimal
    face. ``"auto"`` picks ``exact`` when the ramp is unbounded.

    Idle/wait deficits are recomputed from the optimal pool sizes, so they are
    complementary and the objective is exact for the returned schedule.
    """
    if method == "auto":
        method = "exact" if problem.config.max_new_request is None else "highs"
    if method == "exact":
        if problem.config.max_new_request is not None:
            raise ValueError("the exact method needs an unbounded ramp")
        N = _solve_separable(problem)
    elif method == "highs":
        N = _solve_highs(problem, tie_break)
    else:
        raise ValueError(f"unknown method {method!r}")
    return _solution(problem, N)


def _solve_separable(problem: LpProblem) -> np.ndarray:
    cfg = problem.config
    w_idle, w_wait = cfg.weights
    # ready supply equals the pool size plus offset, so zero surplus/deficit needs N == level
    level = np.cumsum(problem.demand) - problem.shift_offset
    order = np.lexsort((level, problem.ready_block))
    blocks, levels = problem.ready_block[order], level[order]
    starts = np.searchsorted(blocks, np.arange(problem.n_blocks + 1))
    N = np.full(problem.n_blocks, float(cfg.min_pool))
    for b in range(problem.n_blocks):
        c = levels[starts[b] : starts[b + 1]]
        m = c.size
        if m == 0:
            continue
        # smallest breakpoint whose right-derivative w_idle*#(c<=N) - w_wait*#(c>N) is >= 0
        le = np.searchsorted(c, c, side="right")
        ok = w_idle * le - w_wait * (m - le) >= 0
        if w_wait == 0:
            best = -math.inf
        else:
            best = c[np.argmax(ok)]
        N[b] = min(max(best, cfg.min_pool), cfg.max_pool)
    return N


def _solve_highs(problem: LpProblem, tie_break: bool) -> np.ndarray:
    cfg = problem.config
    res = _linprog(problem.c, problem)
    if res.status != 0:
        _raise_for(res, problem)
    N = _snap(res.x[: problem.n_blocks], cfg)
    best = _objective(problem, N)
    if tie_break and problem.n_blocks:
        lens = np.bincount(block_index(problem.horizon, problem.block_length)).astype(float)
        c2 = np.concatenate([lens, np.zeros(2 * problem.horizon)])
        cap = res.fun + 1e-9 * max(1.0, abs(res.fun))
        res2 = _linprog(c2, problem, sp.csr_matrix(problem.c[None, :]), np.array([cap]))
        if res2.status == 0:
            N2 = _snap(res2.x[: problem.n_blocks], cfg)
            if _objective(problem, N2) <= best + 1e-12 * max(1.0, abs(best)):
                N = N2
    return N


def _snap(x: np.ndarray, cfg: OptimizerConfig) -> np.ndarray:
    # simplex vertices of integral instances come back within solver tolerance of integers
    r = np.round(x)
    x = np.where(np.abs(x - r) < 1e-7, r, x)
    return np.clip(x, cfg.min_pool, cfg.max_pool)


def _objective(problem: LpProblem, block_values: np.ndarray) -> float:
    ready = problem.shift @ block_values + problem.shift_offset
    D = np.cumsum(problem.demand)
    w_idle, w_wait = problem.config.weights
    return float(w_idle * np.maximum(ready - D, 0).sum() + w_wait * np.maximum(D - ready, 0).sum())


def _solution(problem: LpProblem, block_values: np.ndarray) -> LpSolution:
    cfg = problem.config
    T, S = problem.horizon, problem.block_length
    schedule = PoolSchedule.from_blocks(
        block_values, T, S, min_pool=cfg.min_pool, max_pool=cfg.max_pool,
        interval_seconds=problem.interval_seconds,
    )
    idle, wait, dp, dm = evaluate_schedule(problem.demand, schedule, cfg)
    w_idle, w_wait = cfg.weights
    sol = LpSolution(
        schedule=schedule,
        rounded_schedule=schedule,
        objective=w_idle * idle + w_wait * wait,
        delta_plus=dp,
        delta_minus=dm,
        curves=ready_curve(np.cumsum(problem.demand), schedule.values, cfg.tau_intervals),
        config=cfg,
    )
    sol.rounded_schedule = round_schedule(sol)
    return sol


def optimize(demand: DemandTrace | np.ndarray, config: OptimizerConfig, method: str = "auto") -> LpSolution:
    return solve(build_lp(demand, config), method=method)


def evaluate_schedule(
    demand: DemandTrace | np.ndarray, schedule: PoolSchedule, config: OptimizerConfig
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Closed-form idle and wait areas of a fixed schedule.

    Returns ``(sum_idle, sum_wait, idle_per_interval, wait_per_interval)``.
    """
    inc, _ = _increments(demand)
    if schedule.horizon != inc.size:
        raise ValueError("schedule and demand horizons differ")
    curves = ready_curve(np.cumsum(inc), schedule.values, config.tau_intervals)
    dp = np.maximum(curves.A_ready - curves.D, 0.0)
    dm = np.maximum(curves.D - curves.A_ready, 0.0)
    return float(dp.sum()), float(dm.sum()), dp, dm


def round_schedule(solution: LpSolution) -> PoolSchedule:
    """Integer schedule: per-block ceiling, clamped to the bounds, ramp-repaired forward."""
    cfg = solution.config
    s = solution.schedule
    bv = np.ceil(s.block_values() - 1e-9)
    bv = np.clip(bv, cfg.min_pool, cfg.max_pool)
    if cfg.max_new_request is not None:
        step = math.floor(cfg.max_new_request)
        for k in range(1, bv.size):
            bv[k] = min(bv[k], bv[k - 1] + step)
    return PoolSchedule.from_blocks(
        bv, s.horizon, s.block_length, min_pool=cfg.min_pool, max_pool=cfg.max_pool,
        interval_seconds=s.interval_seconds,
    )


def smooth_schedule(
    schedule: PoolSchedule, tau_intervals: int, max_new_request: float | None = None
) -> PoolSchedule:
    """Max-filter the schedule with a smoothing factor of ``tau_intervals``.

    Block structure is restored by taking each block's maximum. If a ramp
    limit is given and the result breaks it, earlier blocks are raised (never
    lowered) until it holds.
    """
    if tau_intervals < 1:
        raise ValueError("tau_intervals must be >= 1")
    filtered = max_filter(schedule.values, tau_intervals)
    blk = block_index(schedule.horizon, schedule.block_length)
    bv = np.zeros(blk[-1] + 1)
    np.maximum.at(bv, blk, filtered)
    if max_new_request is not None:
        for k in range(bv.size - 2, -1, -1):
            bv[k] = max(bv[k], bv[k + 1] - max_new_request)
    return schedule.replace_values(bv[blk])


def dump_lp(problem: LpProblem, path: str | Path) -> None:
    """Plain-text standard form: objective row, then one ``<=`` row per constraint, then bounds."""
    A = problem.A_ub.tocsr()
    with open(path, "w") as fh:
        fh.write(f"# variables {problem.n_variables} (N blocks={problem.n_blocks}, idle={problem.horizon}, wait={problem.horizon})\n")
        fh.write("minimize " + " ".join(repr(float(v)) for v in problem.c) + "\n")
        for i in range(A.shape[0]):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            terms = " ".join(f"{float(v)!r}*x{j}" for j, v in zip(A.indices[lo:hi], A.data[lo:hi]))
            fh.write(f"{problem.family_of_row(i)}: {terms} <= {float(problem.b_ub[i])!r}\n")
        for j, (lo, hi) in enumerate(problem.bounds):
            fh.write(f"bound x{j}: {lo!r} .. {'inf' if hi is None else repr(hi)}\n")
