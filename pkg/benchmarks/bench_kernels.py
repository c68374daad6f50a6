"""Time the numba kernels against their numpy twins and check they agree.

    python benchmarks/bench_kernels.py [--patients 2000] [--repeat 3]

Inputs for the simulation kernel are captured from a real ``simulate_cohort``
call; matching uses random propensities of a size typical for one group pair.
"""
import argparse
import time

import numpy as np

from kgite import kernels
from kgite.synth_ehr import SimulationConfig, random_structure, simulate_cohort


def capture_simulation_args(n_patients, seed):
    box = {}
    real = kernels.simulate

    def grab(*args):
        box["args"] = args
        return real(*args)

    kernels.simulate = grab
    try:
        s = random_structure(seed=seed, pilot_patients=200)
        simulate_cohort(SimulationConfig(s, n_patients=n_patients, rng_seed=seed))
    finally:
        kernels.simulate = real
    return box["args"]


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (compilation for numba)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t)
    return min(times), out


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b, equal_nan=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--patients", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()

    sim_args = capture_simulation_args(a.patients, a.seed)
    severity, labs, observed, dx, start = kernels.simulate_numpy(*sim_args)

    fill = np.nanmean(observed.reshape(-1, observed.shape[-1]), axis=0)
    rng = np.random.default_rng(a.seed)
    n_t, n_c = 2000, 20000
    p_t, q = rng.random(n_t), rng.random(n_c)
    t_t, t_c = rng.integers(0, 60, n_t), rng.integers(0, 60, n_c)
    pid_t, pid_c = rng.integers(0, a.patients, n_t), rng.integers(0, a.patients, n_c)
    rank = np.argsort(np.argsort(pid_c, kind="stable"), kind="stable")
    order = np.argsort(q, kind="stable")
    caliper = 0.2 * float(np.std(q))

    cases = [
        ("simulate", kernels.simulate_loop, sim_args, kernels.simulate_numpy, sim_args),
        ("locf", kernels.locf_loop, (observed, fill), kernels.locf_numpy, (observed, fill)),
        ("match", kernels.match_loop, (p_t, t_t, pid_t, q[order], order, t_c, pid_c, rank, caliper),
         kernels.match_numpy, (p_t, t_t, pid_t, q, t_c, pid_c, rank, caliper)),
    ]
    print(f"numba active by default: {kernels.USE_NUMBA}")
    print(f"{'kernel':<10}{'numba s':>12}{'numpy s':>12}{'speedup':>10}  equal")
    for name, fast, fast_args, slow, slow_args in cases:
        tf, of = best_of(fast, fast_args, a.repeat)
        ts, os_ = best_of(slow, slow_args, a.repeat)
        print(f"{name:<10}{tf:>12.4f}{ts:>12.4f}{ts / tf:>10.1f}  {same(of, os_)}")


if __name__ == "__main__":
    main()
