"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from impeval import _accel


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t)
    return min(times)


def cases(rng):
    vals = rng.normal(size=(8, 1024 * 9))
    idx = rng.integers(-1, 4096, size=1024 * 9)
    yield "scatter_add (8x9216 -> 8x4096)", _accel.scatter_add_np, _accel.scatter_add_nb, (vals, idx, 4096)
    mask = rng.uniform(size=(256, 256)) > 0.55
    yield "label4 (256x256, 45% fill)", _accel.label4_np, _accel.label4_nb, (mask,)
    sal = rng.uniform(size=64 * 64)
    fix = rng.uniform(size=64 * 64) > 0.9
    yield "auc_judd (64x64)", _accel.auc_judd_np, _accel.auc_judd_nb, (sal, fix)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not _accel.HAVE_NUMBA:
        print("numba not importable; nothing to compare")
        return
    rng = np.random.default_rng(0)
    print(f"{'kernel':<34} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, f_np, f_nb, a in cases(rng):
        t_np = best_of(f_np, a, args.repeat)
        t_nb = best_of(f_nb, a, args.repeat)
        print(f"{name:<34} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
