"""Wall-clock of one pipeline cycle as the history grows (1 to 14 days of 30 s intervals)."""

import argparse
import time

import numpy as np

from warmpool.optimizer import OptimizerConfig, optimize
from warmpool.pipeline import PipelineConfig, recommend
from warmpool.trace import SyntheticTraceSpec, generate_trace

DAY = 2880


def timed(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--days", default="1,2,4,7,14")
    ap.add_argument("--repeats", type=int, default=3)
    a = ap.parse_args()

    for days in map(int, a.days.split(",")):
        trace = generate_trace(SyntheticTraceSpec("diurnal", 1.0, 20.0, DAY, 0, days * DAY))
        row = [f"{days:3d} d ({trace.horizon:6d} pts)"]
        for mode in ("two_step", "e2e"):
            row.append(f"{mode} {timed(lambda: recommend(trace, PipelineConfig(mode=mode)), a.repeats):6.2f} s")
        print("  ".join(row))
    d = np.random.default_rng(0).poisson(8, 120).astype(float)
    print(f"LP, 120 intervals: {timed(lambda: optimize(d, OptimizerConfig()), 20) * 1e3:.2f} ms")
    print(f"LP, 120 intervals, ramp-limited: {timed(lambda: optimize(d, OptimizerConfig(max_new_request=5)), 20) * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
