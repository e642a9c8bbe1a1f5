"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--size 1048576] [--repeat 7]

Both variants are called directly, so the env flag does not matter here.
Prints one line per kernel: best-of-repeat milliseconds and the speedup.
"""

import argparse
import timeit

import numpy as np

from bpinr import kernels


def best_ms(fn, repeat):
    fn()  # warm up (and trigger compilation)
    return 1e3 * min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=1 << 20, help="samples per signal")
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    s = rng.integers(0, 2**16, args.size).astype(np.uint32)
    near = s.copy()
    near[rng.integers(0, args.size, args.size // 1000)] ^= 1
    planes = kernels.extract_planes_numpy(s, 1, 16)
    tern = rng.integers(-1, 2, args.size).astype(np.int8)

    cases = [
        ("extract 16 planes", lambda: kernels.extract_planes_numba(s, 1, 16),
         lambda: kernels.extract_planes_numpy(s, 1, 16)),
        ("combine 16 planes", lambda: kernels.combine_planes_numba(planes, 1),
         lambda: kernels.combine_planes_numpy(planes, 1)),
        ("mismatch counts, dense", lambda: kernels.plane_mismatch_counts_numba(s, s[::-1].copy(), 16),
         lambda: kernels.plane_mismatch_counts_numpy(s, s[::-1].copy(), 16)),
        ("mismatch counts, near-equal", lambda: kernels.plane_mismatch_counts_numba(s, near, 16),
         lambda: kernels.plane_mismatch_counts_numpy(s, near, 16)),
        ("ternary pack", lambda: kernels.pack_ternary_numba(tern), lambda: kernels.pack_ternary_numpy(tern)),
    ]
    print(f"{args.size} samples, best of {args.repeat}")
    print(f"{'kernel':<30}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow in cases:
        a, b = best_ms(fast, args.repeat), best_ms(slow, args.repeat)
        print(f"{name:<30}{a:>10.2f}{b:>10.2f}{b / a:>8.1f}x")


if __name__ == "__main__":
    main()
