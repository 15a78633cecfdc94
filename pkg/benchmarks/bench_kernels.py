#!/usr/bin/env python3
"""Compare the numba-jitted hot kernels against the pure-numpy fallbacks.

The selected path is controlled by LLM_ALLOC_NO_NUMBA at import time; this
script times both implementations directly, plus an end-to-end solve+evaluate
pipeline under the currently selected path.
"""

import time

import numpy as np

from llm_alloc._kernels import (NUMBA_ENABLED, score_pairs_numba,
                                score_pairs_numpy, simplex_loop_numba,
                                simplex_loop_numpy)


def _bench(fn, args_fn, repeat):
    best = np.inf
    for _ in range(repeat):
        args = args_fn()
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_simplex(m=60, n=80, repeat=30):
    rng = np.random.default_rng(0)

    def make():
        T = rng.normal(size=(m + 1, n + m + 1))
        T[:m, -1] = np.abs(T[:m, -1])
        T[:m, n:n + m] = np.eye(m)
        return T, np.arange(n, n + m, dtype=np.int64), 1e-9, 100000

    rows = []
    if NUMBA_ENABLED:
        simplex_loop_numba(*make())  # JIT warmup
        rows.append(("simplex_loop", "numba",
                     _bench(simplex_loop_numba, make, repeat)))
    rows.append(("simplex_loop", "numpy",
                 _bench(simplex_loop_numpy, make, repeat)))
    return rows


def bench_score(p=4000, repeat=200):
    rng = np.random.default_rng(1)

    def make():
        return (rng.random(p) > 0.2, rng.choice([1.0, 2.0, 4.0], p),
                rng.choice([1.0, 2.0], p), rng.choice([0.0, 2.0], p),
                rng.uniform(1e-4, 1e-2, p), rng.uniform(1e-9, 1e-7, p),
                rng.uniform(0.0, 0.1, p), rng.uniform(0.35, 2.5, p),
                rng.uniform(2, 140, p), 50.0, 1000.0, 300.0, 0.8, 0.03, 4.0,
                24.0, 7e-4, 0.2, np.zeros(p), np.zeros(p), np.zeros(p))

    rows = []
    if NUMBA_ENABLED:
        score_pairs_numba(*make())
        rows.append(("score_pairs", "numba",
                     _bench(score_pairs_numba, make, repeat)))
    rows.append(("score_pairs", "numpy",
                 _bench(score_pairs_numpy, make, repeat)))
    return rows


def bench_end_to_end():
    from llm_alloc.agh import AghParams, agh_solve
    from llm_alloc.harness import gen_scenarios, stage2_evaluate
    from llm_alloc.instance import generate_instance

    inst = generate_instance((10, 10, 10), seed=1)
    t0 = time.perf_counter()
    sol, _, _, _ = agh_solve(inst, AghParams(seed=1))
    t_solve = time.perf_counter() - t0
    scs = gen_scenarios(inst, 200, seed=2)
    t0 = time.perf_counter()
    stage2_evaluate(sol, inst, scs)
    t_eval = time.perf_counter() - t0
    path = "numba" if NUMBA_ENABLED else "numpy"
    return [("agh_solve(10,10,10)", path, t_solve),
            ("stage2_200_scenarios", path, t_eval)]


def main():
    print(f"numba available/selected: {NUMBA_ENABLED} "
          f"(set LLM_ALLOC_NO_NUMBA=1 to force the numpy path)\n")
    rows = bench_simplex() + bench_score() + bench_end_to_end()
    width = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{width}}  {'path':<6}  best (s)")
    for name, path, t in rows:
        print(f"{name:<{width}}  {path:<6}  {t:.6f}")


if __name__ == "__main__":
    main()
