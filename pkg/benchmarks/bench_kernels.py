"""Numba versus numpy timings for the hot kernels.

Kernel timings call both implementations directly in one process. The
end-to-end timing runs the ring example (simulate + analyze) in two fresh
interpreters with VCCONSENSUS_NUMBA set to 1 and 0, since the backend is
chosen at import time.

    python3 benchmarks/bench_kernels.py --repeats 200
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from vcconsensus import _kernels
from vcconsensus._accel import NUMBA_AVAILABLE
from vcconsensus.constraints import direction_grid


def best_of(func, args, repeats):
    func(*args)  # warm-up / compile
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - t0)
    return min(times), float(np.median(times))


def kernel_cases(rng):
    n, M, r = 8, 5, 2
    hist = rng.normal(size=(M + 1, n, r))
    w = rng.uniform(0, 0.5, (n, n)) * (rng.random((n, n)) < 0.4)
    np.fill_diagonal(w, 0.0)
    delays = rng.integers(0, M + 1, (n, n))
    dirs = direction_grid(2, 360)
    centers = rng.normal(scale=0.3, size=(4, 2))
    radii = rng.uniform(0.5, 1.5, 4)
    lower = -rng.uniform(0, 1, (4, 2))
    upper = rng.uniform(0, 1, (4, 2))
    D = 2 * n * (M + 1)
    W = rng.random((D, D))
    W /= W.sum(axis=1, keepdims=True)
    G = np.eye(D)
    return {
        "consensus_terms": ((hist, w, delays, 0.2), "consensus_terms"),
        "ray_ball_intervals": ((dirs, centers, radii), "ray_ball_intervals"),
        "ray_box_intervals": ((dirs, lower, upper), "ray_box_intervals"),
        "fold_step": ((W, G, G.max(axis=0), G.min(axis=0)), "fold_step"),
    }


END_TO_END = """
import time, numpy as np
from vcconsensus.config import load_config
from vcconsensus.protocol import run
from vcconsensus.analysis import analyze
cfg = load_config("paper_section5")
run(cfg)  # compile
t0 = time.perf_counter(); traj = run(cfg); t1 = time.perf_counter()
analyze(traj, cfg.schedule.window_starts(cfg.horizon), cfg.rho_under)
t2 = time.perf_counter()
print(t1 - t0, t2 - t1)
"""


def end_to_end(flag):
    env = dict(os.environ, VCCONSENSUS_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, check=True,
                         capture_output=True, text=True).stdout.split()
    return float(out[0]), float(out[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--skip-end-to-end", action="store_true")
    ap.add_argument("--json", default=None, help="write results to this file")
    args = ap.parse_args()

    if not NUMBA_AVAILABLE:
        print("numba is not installed; only numpy timings are meaningful")
    rng = np.random.default_rng(args.seed)
    results = {}
    print(f"{'kernel':<22}{'numba (us)':>14}{'numpy (us)':>14}{'ratio':>10}")
    for name, (kargs, attr) in kernel_cases(rng).items():
        fast, _ = best_of(getattr(_kernels, attr + "_numba"), kargs, args.repeats)
        slow, _ = best_of(getattr(_kernels, attr + "_numpy"), kargs, args.repeats)
        results[name] = {"numba_s": fast, "numpy_s": slow}
        print(f"{name:<22}{fast * 1e6:>14.1f}{slow * 1e6:>14.1f}{slow / fast:>10.2f}")

    if not args.skip_end_to_end:
        for flag, label in (("1", "numba"), ("0", "numpy")):
            sim, an = end_to_end(flag)
            results[f"ring_example_{label}"] = {"simulate_s": sim, "analyze_s": an}
            print(f"ring example, {label:<6} simulate {sim:.3f} s   analyze {an:.3f} s")

    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
