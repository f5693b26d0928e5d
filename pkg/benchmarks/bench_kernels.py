#!/usr/bin/env python3
"""Benchmark the compiled solver kernel against the NumPy fallback.

Times a single iteration step at several problem sizes and a short
end-to-end run, printing a side-by-side table.  Run from the repo root:

    python benchmarks/bench_kernels.py
"""

import time

import numpy as np

import sparsemf
from sparsemf._kernels import HAVE_COMPILED, get_backend


def bench_step(backend_name, l_dim, m_dim, h_dim, repeats):
    rng = np.random.default_rng(0)
    v = rng.standard_normal((l_dim, m_dim))
    a = rng.standard_normal((l_dim, h_dim))
    b = rng.standard_normal((h_dim, m_dim))
    sb = np.ones((h_dim, m_dim))
    ca = np.ones(h_dim)
    backend = get_backend(backend_name)

    k = 1e6
    for _ in range(5):  # warm up caches and BLAS threads
        out = backend.solver_step(v, a, b, sb, k, 0.05, ca, 0.1, True, False)
    start = time.perf_counter()
    for _ in range(repeats):
        out = backend.solver_step(v, a, b, sb, k, 0.05, ca, 0.1, True, False)
        a, b = out["a_bar"], out["b_bar"]
        sb = np.maximum(out["sigma_b_raw"], 0.0)
        k = out["k"]
        if out["status"] != 0:
            break
    return (time.perf_counter() - start) / repeats


def bench_run(backend_name, iters=3000):
    gt = sparsemf.sample_ground_truth(200, 200, 10, 0.2, seed=7)
    obs = sparsemf.observe(gt, sigma=0.05)
    cfg = sparsemf.SolverConfig(sigma=0.05, k0=1e6, max_iters=iters,
                                init_seed=3, backend=backend_name)
    start = time.perf_counter()
    state, _ = sparsemf.run(obs, cfg, h_dim=10, trace_stride=500)
    return (time.perf_counter() - start) / state.iter


def main():
    backends = ["numpy"] + (["compiled"] if HAVE_COMPILED else [])
    if not HAVE_COMPILED:
        print("compiled kernels not built; benchmarking the fallback only\n")

    sizes = [(100, 100, 5, 3000), (200, 200, 10, 2000),
             (500, 500, 20, 300), (1000, 1000, 40, 60)]
    print(f"{'L x M x H':>16}  " + "".join(f"{b:>12}" for b in backends)
          + ("     speedup" if len(backends) == 2 else ""))
    for l_dim, m_dim, h_dim, reps in sizes:
        times = [bench_step(b, l_dim, m_dim, h_dim, reps) for b in backends]
        row = f"{l_dim}x{m_dim}x{h_dim:>3}  " .rjust(18)
        row += "".join(f"{t * 1e6:>10.0f}us" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.2f}x"
        print(row)

    print("\nend-to-end run (200x200x10, 3000 tuned iterations):")
    for b in backends:
        t = bench_run(b)
        print(f"  {b:>9}: {t * 1e6:.0f} us/iteration")


if __name__ == "__main__":
    main()
