#!/usr/bin/env python3
"""Times the segmentation sweep under the numba and pure-Python backends.

Usage: python3 benchmarks/bench_kernels.py [--patch-size N] [--repeats K]

The two backends run the same function body (see gcdetect._kernels); this
script reports their wall times and verifies the outputs match exactly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from gcdetect import _kernels
from gcdetect.selective_search import _pixel_edges
from gcdetect.synth import SynthConfig, generate_slide


def make_patch(size: int) -> np.ndarray:
    slide, _ = generate_slide(0, SynthConfig(seed=3, count=1, size=1024))
    return slide.pixels[:size, :size].copy()


def timed(fn, *args, repeats: int) -> tuple[float, np.ndarray]:
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--patch-size", type=int, default=244)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    patch = make_patch(args.patch_size)
    eu, ev, weights = _pixel_edges(patch)
    order = np.argsort(weights, kind="stable")
    n = patch.shape[0] * patch.shape[1]
    kernel_args = (eu, ev, weights, order, n, 150.0, 20)

    print(f"patch {args.patch_size}x{args.patch_size}, {len(weights)} edges")

    if _kernels.segment_components_njit is None:
        print("numba backend unavailable (GCDETECT_NO_NUMBA set or numba missing)")
        t_py, _ = timed(_kernels.segment_components_py, *kernel_args, repeats=args.repeats)
        print(f"python: {t_py * 1e3:8.1f} ms")
        return 0

    _kernels.segment_components_njit(*kernel_args)  # compile before timing
    t_jit, out_jit = timed(_kernels.segment_components_njit, *kernel_args, repeats=args.repeats)
    t_py, out_py = timed(_kernels.segment_components_py, *kernel_args, repeats=args.repeats)

    match = np.array_equal(out_jit, out_py)
    print(f"numba : {t_jit * 1e3:8.1f} ms")
    print(f"python: {t_py * 1e3:8.1f} ms")
    print(f"speedup: {t_py / t_jit:6.1f}x   outputs identical: {match}")
    return 0 if match else 1


if __name__ == "__main__":
    raise SystemExit(main())
