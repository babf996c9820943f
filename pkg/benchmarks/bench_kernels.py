"""Compare the numba and pure-numpy kernels (radix-2 FFT and the 2-qubit circuit).

    python benchmarks/bench_kernels.py [--repeat 20]

The first numba call compiles (or loads from cache), so it is timed separately.
"""
import argparse
import time

import numpy as np

from opinionxf import kernels
from opinionxf._jit import HAVE_NUMBA


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)

    cases = []
    for batch, n in [(64, 128), (1024, 128), (256, 1024)]:
        x = rng.standard_normal((batch, n)) + 0j
        cases.append((f"fft  {batch}x{n}", lambda x=x: kernels.fft_radix2_np(x),
                      lambda x=x: kernels.fft_radix2_nb(x)))
    for n in [64, 10_000, 1_000_000]:
        t = rng.uniform(0, 2 * np.pi, size=(2, n))
        cases.append((f"zz   n={n}", lambda t=t: kernels.ry_ry_cz_zz_np(t[0], t[1]),
                      lambda t=t: kernels.ry_ry_cz_zz_nb(t[0], t[1])))

    if not HAVE_NUMBA:
        print("numba is not installed; the numba column falls back to numpy")
    t0 = time.perf_counter()
    for _, _, nb in cases:
        nb()
    print(f"numba warm-up (compile or cache load): {time.perf_counter() - t0:.3f}s")

    print(f"{'case':<18} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, np_fn, nb_fn in cases:
        a = best_of(np_fn, args.repeat) * 1e3
        b = best_of(nb_fn, args.repeat) * 1e3
        print(f"{name:<18} {a:10.3f} {b:10.3f} {a / b:8.2f}")


if __name__ == "__main__":
    main()
