"""Pool-size schedules and the cumulative supply/demand curves."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def block_index(horizon: int, block_length: int) -> np.ndarray:
    """Block id of every interval; blocks are anchored at multiples of ``block_length``."""
    return np.arange(horizon) // block_length


def n_blocks(horizon: int, block_length: int) -> int:
    return -(-horizon // block_length)


@dataclass(frozen=True, eq=False)
class PoolSchedule:
    """Target pool size per interval, constant inside each block."""

    values: np.ndarray
    block_length: int = 1
    min_pool: float = 0
    max_pool: float = math.inf
    interval_seconds: int = 30

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise ValueError("schedule needs at least one interval")
        if self.block_length < 1:
            raise ValueError("block_length must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_blocks(cls, block_values, horizon: int, block_length: int, **kw) -> "PoolSchedule":
        bv = np.asarray(block_values, dtype=float)
        if bv.size != n_blocks(horizon, block_length):
            raise ValueError("wrong number of block values")
        return cls(bv[block_index(horizon, block_length)], block_length, **kw)

    @classmethod
    def constant(cls, value: float, horizon: int, **kw) -> "PoolSchedule":
        kw.setdefault("block_length", horizon)
        return cls(np.full(horizon, float(value)), **kw)

    def __len__(self) -> int:
        return int(self.values.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PoolSchedule):
            return NotImplemented
        return (
            self.block_length == other.block_length
            and self.min_pool == other.min_pool
            and self.max_pool == other.max_pool
            and self.interval_seconds == other.interval_seconds
            and np.array_equal(self.values, other.values)
        )

    @property
    def horizon(self) -> int:
        return len(self)

    @property
    def bounds(self) -> tuple[float, float]:
        return (self.min_pool, self.max_pool)

    def block_values(self) -> np.ndarray:
        return self.values[:: self.block_length].copy()

    def replace_values(self, values) -> "PoolSchedule":
        return PoolSchedule(values, self.block_length, self.min_pool, self.max_pool, self.interval_seconds)

    def violations(self, max_new_request: float | None = None, tol: float = 1e-9) -> list[str]:
        """Names of violated schedule invariants (empty when feasible)."""
        out = []
        v = self.values
        b = block_index(v.size, self.block_length)
        starts = v[:: self.block_length][b]
        if np.any(np.abs(v - starts) > tol):
            out.append("block-constancy")
        if np.any(v < self.min_pool - tol) or np.any(v > self.max_pool + tol):
            out.append("bounds")
        if max_new_request is not None and np.any(np.diff(v) > max_new_request + tol):
            out.append("ramp")
        return out

    def is_integral(self) -> bool:
        return bool(np.all(self.values == np.round(self.values)))


@dataclass(frozen=True)
class CumulativeCurves:
    """Cumulative demand ``D``, re-hydration requests ``A`` and ready clusters ``A_ready``."""

    D: np.ndarray
    A: np.ndarray
    A_ready: np.ndarray


def ready_curve(cum_demand: np.ndarray, pool: np.ndarray, tau: int) -> CumulativeCurves:
    """Cumulative curves for a given pool-size path.

    Requests are issued as demand arrives plus whatever keeps the pool at its
    target, and become ready ``tau`` intervals later; before ``tau`` only the
    initial pool is available.
    """
    D = np.asarray(cum_demand, dtype=float)
    N = np.asarray(pool, dtype=float)
    A = D + N
    A_ready = np.empty_like(A)
    k = min(tau, A.size)
    A_ready[:k] = N[0]
    A_ready[k:] = A[: A.size - k]
    return CumulativeCurves(D, A, A_ready)
