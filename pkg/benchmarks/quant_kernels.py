#!/usr/bin/env python3
"""Compare the compiled quantization kernels against the numpy fallback.

Times the three hot element-wise operations (min/max scan, int8 quantize,
fused fake-quantize) on large float64 arrays and prints a speedup table.

Run after an editable install:  python benchmarks/quant_kernels.py
"""

import argparse
import time

import numpy as np

from tlbench.quant import _kernels_py

try:
    from tlbench.quant import _kernels as _compiled
except ImportError:
    _compiled = None


def time_op(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench(size, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=size)
    out_i = np.empty(size, dtype=np.int32)
    out_f = np.empty(size, dtype=np.float64)
    scale, zp, qmin, qmax = 0.02, 3, -128, 127

    cases = {
        "minmax": lambda impl: impl.minmax(x),
        "quantize_i32": lambda impl: impl.quantize_i32(x, scale, zp, qmin, qmax, out_i),
        "fake_quant": lambda impl: impl.fake_quant_f64(x, scale, zp, qmin, qmax, out_f),
    }

    print(f"array size: {size:,} float64, best of {repeats} runs")
    header = f"{'op':<14}{'numpy (ms)':>12}{'compiled (ms)':>15}{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, call in cases.items():
        t_py = time_op(lambda: call(_kernels_py), repeats) * 1e3
        if _compiled is None:
            print(f"{name:<14}{t_py:>12.2f}{'n/a':>15}{'n/a':>10}")
            continue
        t_cy = time_op(lambda: call(_compiled), repeats) * 1e3
        print(f"{name:<14}{t_py:>12.2f}{t_cy:>15.2f}{t_py / t_cy:>9.2f}x")

    # correctness cross-check on the same data
    if _compiled is not None:
        ref = np.empty_like(out_f)
        _kernels_py.fake_quant_f64(x, scale, zp, qmin, qmax, ref)
        _compiled.fake_quant_f64(x, scale, zp, qmin, qmax, out_f)
        assert np.array_equal(ref, out_f), "implementations disagree"
        print("\nimplementations agree bit-for-bit")
    else:
        print("\ncompiled kernels unavailable (pure-python build)")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=10_000_000)
    parser.add_argument("--repeats", type=int, default=7)
    args = parser.parse_args()
    bench(args.size, args.repeats)
