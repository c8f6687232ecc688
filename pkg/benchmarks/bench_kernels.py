"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Times the liveness peak over traces of sampled CNN specs and the Jacobi
eigendecomposition of feature covariance matrices; the first numba call
(compilation or cache load) is reported separately.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from trainmem import _kernels
from trainmem.archspec import GenerationConfig, sample_specs
from trainmem.estimators import _deltas, propagate_shapes


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--specs", type=int, default=50)
    args = ap.parse_args()

    t0 = time.perf_counter()
    _kernels.peak_running_sum_numba(np.zeros(1, dtype=np.int64))
    _kernels.jacobi_eigh_numba(np.eye(2))
    print(f"numba first-call overhead: {1e3 * (time.perf_counter() - t0):.1f} ms")

    specs = sample_specs(GenerationConfig.for_family("CNN"), args.specs, seed=0)
    streams = [_deltas(propagate_shapes(s), 4, 2) for s in specs]
    long = np.concatenate([np.random.default_rng(0).integers(-1000, 1000, 2_000_000)])

    rows = []
    for name, data in (("peak, CNN traces", streams), ("peak, 2M-event stream", [long])):
        t_np = best_of(lambda: [_kernels.peak_running_sum_numpy(d) for d in data], args.repeat)
        t_nb = best_of(lambda: [_kernels.peak_running_sum_numba(d) for d in data], args.repeat)
        rows.append((name, t_np, t_nb))

    for n in (13, 32, 64):
        rng = np.random.default_rng(n)
        X = rng.standard_normal((4 * n, n))
        cov = np.cov(X, rowvar=False)
        t_np = best_of(lambda: _kernels.jacobi_eigh_numpy(cov), args.repeat)
        t_nb = best_of(lambda: _kernels.jacobi_eigh_numba(cov), args.repeat)
        rows.append((f"jacobi, {n}x{n}", t_np, t_nb))

    print(f"{'kernel':<24} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>8}")
    for name, t_np, t_nb in rows:
        print(f"{name:<24} {1e3 * t_np:>12.3f} {1e3 * t_nb:>12.3f} {t_np / t_nb:>7.1f}x")
    print(f"active backend: {_kernels.backend()}")


if __name__ == "__main__":
    main()
