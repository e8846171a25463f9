#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times the per-client local-step kernel and a full federated round on the
reference regression task, once per backend. Run from the repo root:

    python3 scripts/benchmark_backends.py

Select a backend globally for any other entry point with
NOISYFED_BACKEND=numpy (or numba).
"""

import time

import numpy as np

from noisyfed import backend
from noisyfed.config import preset
from noisyfed.experiment import build_task, run_one_seed


def time_local_steps(n_calls=2000):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((300, 60))
    y = rng.standard_normal(300)
    w0 = rng.standard_normal(60)
    batches = np.stack([rng.choice(300, size=16, replace=False) for _ in range(5)]).astype(np.int64)
    backend.local_steps("mse_linear", X, y, w0, 0.003, batches)  # warm any jit
    t0 = time.perf_counter()
    for _ in range(n_calls):
        backend.local_steps("mse_linear", X, y, w0, 0.003, batches)
    return (time.perf_counter() - t0) / n_calls


def time_full_run():
    cfg = preset("v5a_constant_noise")
    dataset, model, partition = build_task(cfg)
    run_one_seed(cfg, dataset, model, partition, 1)  # warm
    t0 = time.perf_counter()
    run_one_seed(cfg, dataset, model, partition, 2)
    return time.perf_counter() - t0


def main():
    rows = []
    for name in ("numpy", "numba"):
        try:
            backend.set_backend(name)
        except ValueError as exc:
            print(f"{name}: skipped ({exc})")
            continue
        per_call = time_local_steps()
        full = time_full_run()
        rows.append((name, per_call * 1e6, full))
    print(f"{'backend':<10s}{'local_steps us/call':>22s}{'full K=100 run s':>20s}")
    for name, us, full in rows:
        print(f"{name:<10s}{us:>22.1f}{full:>20.3f}")
    if len(rows) == 2:
        print(f"speedup: local_steps x{rows[0][1] / rows[1][1]:.1f}, "
              f"full run x{rows[0][2] / rows[1][2]:.1f}")


if __name__ == "__main__":
    main()
