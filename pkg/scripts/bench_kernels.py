"""Time the packed XNOR/popcount convolution against the dense ternary reference.

    python scripts/bench_kernels.py --channels 16 32 64 --size 16
"""

import argparse
import time

import numpy as np

from s2bnet.bitpack import binary_conv2d_packed, ternary_conv2d_reference


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--channels", type=int, nargs="+", default=[16, 32, 64])
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    for c in args.channels:
        x = rng.choice(np.array([-1, 1], np.int8), size=(1, c, args.size, args.size))
        w = rng.choice(np.array([-1, 1], np.int8), size=(c, c, 3, 3))
        packed = best_of(lambda: binary_conv2d_packed(x, w, 1), args.repeats)
        dense = best_of(lambda: ternary_conv2d_reference(x, w, 1), args.repeats)
        exact = np.array_equal(binary_conv2d_packed(x, w, 1), ternary_conv2d_reference(x, w, 1))
        print(f"C={c:4d}  packed {packed * 1e3:8.2f} ms  reference {dense * 1e3:8.2f} ms  "
              f"speedup x{dense / packed:.1f}  bit-exact {exact}")


if __name__ == "__main__":
    main()
