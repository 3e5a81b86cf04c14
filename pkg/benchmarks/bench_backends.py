"""Time the numba kernels against the pure-numpy fallback.

    python benchmarks/bench_backends.py [--sizes 256,512,1024] [--repeats 3]

Both backends run the same tile traversal, so outputs are checked for bitwise
equality before timings are printed.
"""

import argparse
import statistics
import time

import numpy as np

from samoyeds import SparseFormatConfig, compress_input, encode_weight, prune_to_format
from samoyeds.engine import TileConfig, spmm_dense_tiled, spmm_tiled
from samoyeds.kernels import available


def timed(fn, repeats):
    out = fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return out, statistics.median(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sizes", default="256,512,1024")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    if "numba" not in available():
        raise SystemExit("numba backend disabled; unset SAMOYEDS_BACKEND to compare")
    cfg = SparseFormatConfig(1, 2, 32)
    tc = TileConfig()
    rng = np.random.default_rng(0)
    print(f"{'size':>6} {'path':>7} {'numba s':>10} {'numpy s':>10} {'numpy/numba':>12}")
    for size in (int(s) for s in args.sizes.split(",")):
        a = rng.standard_normal((size, size)).astype(np.float32)
        sw = encode_weight(prune_to_format(a, cfg)[0], cfg)
        x = compress_input(rng.standard_normal((size, size)).astype(np.float32), np.arange(size))
        runs = {
            "sparse": lambda b: spmm_tiled(sw, x, tc, threads=args.threads, backend=b),
            "dense": lambda b: spmm_dense_tiled(a, x, tc, threads=args.threads, backend=b),
        }
        for path, fn in runs.items():
            c_nb, t_nb = timed(lambda: fn("numba"), args.repeats)
            c_np, t_np = timed(lambda: fn("numpy"), args.repeats)
            assert np.array_equal(c_nb, c_np), f"backends disagree on {path} {size}"
            print(f"{size:>6} {path:>7} {t_nb:>10.4f} {t_np:>10.4f} {t_np / t_nb:>12.2f}")


if __name__ == "__main__":
    main()
