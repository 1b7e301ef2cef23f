"""Closed-loop alpha_prime tuning toward a target average wait on a stationary Poisson trace."""

import argparse

import numpy as np

from warmpool.autotuner import TunerState
from warmpool.pipeline import PipelineConfig, closed_loop_tuning
from warmpool.trace import DemandTrace


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rate", type=float, default=5.0, help="requests per interval")
    ap.add_argument("--targets", default="5,15", help="target waits in seconds")
    ap.add_argument("--cycles", type=int, default=10)
    ap.add_argument("--window", type=int, default=480, help="intervals per cycle")
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    H = a.window
    trace = DemandTrace(np.random.default_rng(a.seed).poisson(a.rate, H * (a.cycles + 2)))
    for target in map(float, a.targets.split(",")):
        print(f"target {target:g} s")
        out = closed_loop_tuning(trace, PipelineConfig(horizon_intervals=H), TunerState(target, 0.5), a.cycles)
        for k, (alpha, wait) in enumerate(out, 1):
            mark = "*" if abs(wait - target) <= 0.25 * target else " "
            print(f"  cycle {k:2d}  a'={alpha:.3f}  wait {wait:6.1f} s {mark}")


if __name__ == "__main__":
    main()
