"""Time the numba kernels against their pure-numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--size 128] [--channels 8] [--repeat 5]

Both implementations are called directly, so ``PSVB_KERNELS`` does not
matter here. The first numba call (compilation) is excluded.
"""

import argparse
import time

import numpy as np

from psvb import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(size, channels, rng):
    x = rng.standard_normal((channels, size, size))
    offsets = np.array([(i, j) for i in range(-1, 2) for j in range(-1, 2)], dtype=np.int64)
    mats = rng.standard_normal((len(offsets), channels, channels))
    t = rng.uniform(-1.5, 1.5, size * size * channels)
    values = np.cumsum(rng.uniform(-0.1, 0.1, 21))
    yield "conv_direct", (x, (size, size), offsets, mats)
    yield "spline_eval", (t, -1.0, 0.1, values)
    yield "soft_threshold", (t, 0.3)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    if not _kernels.HAS_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, call_args in cases(args.size, args.channels, rng):
        slow = getattr(_kernels, f"{name}_numpy")
        fast = getattr(_kernels, f"{name}_numba")
        diff = float(np.max(np.abs(slow(*call_args) - fast(*call_args))))
        t_np = best_of(lambda: slow(*call_args), args.repeat)
        t_nb = best_of(lambda: fast(*call_args), args.repeat)
        print(f"{name:<16}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.1f}{diff:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
