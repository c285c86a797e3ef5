"""Time the compiled episode kernel against the pure-Python fallback.

Both backends consume the same random stream and produce identical results,
so the comparison is like for like. Usage::

    python benchmarks/bench_kernels.py [--episodes 200] [--repeat 3]
"""

import argparse
import time

import numpy as np

from advmm import kernel
from advmm.adversary import FixedRegime, RandomRegime, StrategicRegime
from advmm.learner import TrainConfig, make_workspace
from advmm.market import SimConfig
from advmm.policy import GaussianPolicy


def workspace(regime, learning):
    mm = GaussianPolicy(np.random.default_rng(0).normal(0, 0.1, (4, 10)), var_floor=1e-2)
    mm.weights[1, 0] = 0.5
    ws = make_workspace(SimConfig(), regime, mm, config=TrainConfig(), random_start=learning)
    ws.learn_mm = ws.policy_updates = learning
    ws.learn_adv = learning and isinstance(regime, StrategicRegime)
    return ws


def best_time(backend, regime, learning, episodes, repeat):
    times = []
    for _ in range(repeat):
        ws = workspace(regime, learning)
        rng = np.random.default_rng(1)
        start = time.perf_counter()
        status, done, *_ = kernel.run_batch(ws, rng, episodes, backend=backend)
        times.append(time.perf_counter() - start)
        assert status == kernel.OK and done == episodes
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    available = kernel.backends()
    if "cython" not in available:
        print("compiled core not built; run `pip install -e . --no-build-isolation` first")
        return
    cases = [
        ("fixed", FixedRegime(), False),
        ("fixed", FixedRegime(), True),
        ("random", RandomRegime(), True),
        ("strategic b", StrategicRegime.untrained(("b",)), True),
        ("strategic bAk", StrategicRegime.untrained(("b", "A", "k")), True),
    ]
    print(f"{args.episodes} episodes of 200 steps, best of {args.repeat}")
    print(f"{'regime':15s} {'mode':9s} {'python s':>9s} {'cython s':>9s} {'speedup':>8s} {'cython ep/s':>12s}")
    for name, regime, learning in cases:
        py = best_time("python", regime, learning, args.episodes, args.repeat)
        cy = best_time("cython", regime, learning, args.episodes, args.repeat)
        mode = "learning" if learning else "evaluate"
        print(f"{name:15s} {mode:9s} {py:9.3f} {cy:9.4f} {py / cy:7.1f}x {args.episodes / cy:12.0f}")


if __name__ == "__main__":
    main()
