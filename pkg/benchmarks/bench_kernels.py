"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Also times one full TRIRL run on the 5x5 gridworld with each backend.
"""

import argparse
import time

import numpy as np

from trirl import _backend, density, driver, solver
from trirl._backend import reference_kernels
from trirl.density import _sampler_tables
from trirl.driver import ExperimentConfig, expert_for, run_trirl
from trirl.mdp import TabularPolicy, load_environment


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(env):
    mdp = env.mdp
    rng = np.random.default_rng(0)
    r = rng.normal(size=(mdp.n_states, mdp.n_actions))
    bellman = (*mdp.csr, r, mdp.gamma, np.zeros(mdp.n_states), 1e-10, 100_000)
    pol = TabularPolicy(rng.dirichlet(np.ones(mdp.n_actions), size=mdp.n_states))
    u = rng.random((100, 1001, 4))
    rollouts = (*_sampler_tables(mdp, pol), mdp.n_actions, mdp.gamma, u)
    return {"soft_bellman_solve": bellman, "sample_rollouts": rollouts}


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--env", default="gridworld-6x6-rooms")
    args = ap.parse_args()
    fast = _backend.kernels
    if fast is reference_kernels:
        print("compiled kernels not built; only the fallback is available")
    env = load_environment(args.env)
    print(f"{'kernel':<20} {'compiled ms':>12} {'python ms':>12} {'speedup':>8}")
    for name, kargs in cases(env).items():
        tc = best_of(lambda: getattr(fast, name)(*kargs), args.repeat)
        tp = best_of(lambda: getattr(reference_kernels, name)(*kargs), args.repeat)
        print(f"{name:<20} {1e3 * tc:12.2f} {1e3 * tp:12.2f} {tp / tc:8.1f}")

    grid = load_environment("gridworld-5x5")
    pol, occ = expert_for(grid)
    cfg = ExperimentConfig(record_time=False)
    timings = {}
    for label, mod in (("compiled", fast), ("python", reference_kernels)):
        _backend.kernels = mod
        # each module holds its own reference to the selected kernels
        solver.kernels = density.kernels = driver.kernels = mod
        timings[label] = best_of(lambda: run_trirl(grid.mdp, occ, cfg, pol), 1)
    solver.kernels = density.kernels = driver.kernels = _backend.kernels = fast
    print(f"{'run_trirl 5x5':<20} {1e3 * timings['compiled']:12.2f} {1e3 * timings['python']:12.2f} "
          f"{timings['python'] / timings['compiled']:8.1f}")


if __name__ == "__main__":
    main()
