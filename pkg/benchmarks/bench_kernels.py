"""Compare the compiled and pure-Python kernel backends.

Runs the same ensemble on each available backend, checks that the results
are bitwise identical, and reports steps per second.

Usage::

    python benchmarks/bench_kernels.py [--M 200] [--N 20000] [--repeat 3]
"""
import argparse
import time

import numpy as np

from salab import kernels
from salab.analysis import EnsembleConfig, InitialCondition, ensemble_run
from salab.engine import Constant
from salab.models import ScalarLinearModel, SgdModel, TdModel

CASES = {
    "scalar-linear": (ScalarLinearModel(), Constant(2.8e-3), [0.0]),
    "td": (TdModel(), Constant(1e-2), [0.0, 0.0]),
    "styblinski-zigzag": (SgdModel("styblinski", "zigzag"), Constant(0.1), [0.0, 0.0]),
    "camel": (SgdModel("camel", sigma_w=20.0), Constant(0.02), [0.0, 0.0]),
}


def time_case(model, schedule, theta0, M, N, backend, repeat):
    cfg = EnsembleConfig(M=M, N=N, theta0=InitialCondition(theta0), master_seed=7)
    best, summary = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        summary = ensemble_run(model.problem(), model.chain(), schedule, cfg, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, summary


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--M", type=int, default=200)
    parser.add_argument("--N", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'case':<20}" + "".join(f"{b + ' Msteps/s':>22}" for b in backends)
          + f"{'speedup':>10}{'identical':>11}")
    for name, (model, schedule, theta0) in CASES.items():
        times, sums = {}, {}
        for b in backends:
            times[b], sums[b] = time_case(model, schedule, theta0, args.M, args.N, b, args.repeat)
        rates = "".join(f"{args.M * args.N / times[b] / 1e6:>22.2f}" for b in backends)
        speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        same = all(np.array_equal(sums[b].theta_pr, sums["python"].theta_pr) for b in backends)
        print(f"{name:<20}{rates}{speedup:>10.1f}{str(same):>11}")


if __name__ == "__main__":
    main()
