"""Benchmark the compiled kernels against their pure-numpy fallbacks.

Runs the exact k-NN search (grid-accelerated spatial and blocked feature)
and the fused elementwise kernels on representative shapes, checks that
both backends produce identical results, and prints a timing table.

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from ppcnet import fastops
from ppcnet.neighbors import _fallback, compiled_available, knn_bruteforce
from ppcnet.rng import make_rng

try:
    from ppcnet.neighbors import _kernels as knn_compiled
except ImportError:
    knn_compiled = None


def timeit(fn, repeats=3):
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_knn(quick: bool):
    print("\nexact spatial k-NN (k=16)")
    print(f"{'N':>8} {'dilation':>9} {'compiled':>12} {'numpy':>12} {'speedup':>9}")
    rng = make_rng(0)
    sizes = [2048, 8192] if quick else [2048, 8192, 32768]
    for n in sizes:
        for dilation in (1, 2):
            pts = rng.standard_normal((n, 3))
            args = (pts, 16, dilation, n)
            if knn_compiled is not None:
                fast = timeit(lambda: knn_compiled.knn_spatial(*args))
                got = knn_compiled.knn_spatial(*args)
            else:
                fast, got = None, None
            slow = timeit(lambda: _fallback.knn_spatial(*args), repeats=1)
            want = _fallback.knn_spatial(*args)
            if got is not None:
                assert np.array_equal(got, want), "backend mismatch"
                print(f"{n:>8} {dilation:>9} {fast * 1e3:>10.1f}ms {slow * 1e3:>10.1f}ms "
                      f"{slow / fast:>8.1f}x")
            else:
                print(f"{n:>8} {dilation:>9} {'(not built)':>12} {slow * 1e3:>10.1f}ms")
    # oracle agreement on a small cloud for good measure
    pts = rng.standard_normal((400, 3))
    assert np.array_equal(_fallback.knn_spatial(pts, 8, 2, 400),
                          knn_bruteforce(pts, 8, 2).indices)

    print("\nexact feature-space k-NN (k=16, F=64)")
    print(f"{'N':>8} {'compiled':>12} {'numpy':>12} {'speedup':>9}")
    for n in (512, 1024) if quick else (512, 1024, 2048):
        feats = rng.standard_normal((n, 64))
        if knn_compiled is not None:
            fast = timeit(lambda: knn_compiled.knn_feature(feats, 16, n))
            got = knn_compiled.knn_feature(feats, 16, n)
        else:
            fast, got = None, None
        slow = timeit(lambda: _fallback.knn_feature(feats, 16, n), repeats=1)
        want = _fallback.knn_feature(feats, 16, n)
        if got is not None:
            assert np.array_equal(got, want), "backend mismatch"
            print(f"{n:>8} {fast * 1e3:>10.1f}ms {slow * 1e3:>10.1f}ms {slow / fast:>8.1f}x")
        else:
            print(f"{n:>8} {'(not built)':>12} {slow * 1e3:>10.1f}ms")


def bench_fastops(quick: bool):
    if not fastops.compiled_active():
        print("\nfastops extension not built; skipping elementwise comparison")
        return
    import ppcnet._fastops as comp

    rows = 163840 if quick else 327680
    f = 32
    rng = make_rng(1)
    h = rng.standard_normal((rows, f)).astype(np.float32)
    g = rng.standard_normal((rows, f)).astype(np.float32)
    mean, var = h.mean(0), h.var(0)
    istd = (1.0 / np.sqrt(var + 1e-5)).astype(np.float32)
    gamma = np.ones(f, np.float32)
    beta = np.zeros(f, np.float32)

    def numpy_norm_leaky():
        z = gamma * ((h - mean.astype(np.float32)) * istd) + beta
        mask = (z < 0).astype(np.uint8)
        return np.where(mask, z * np.float32(0.2), z), mask

    print(f"\nfused elementwise kernels ({rows} x {f} float32)")
    print(f"{'kernel':>22} {'compiled':>12} {'numpy':>12} {'speedup':>9}")
    pairs = [
        ("norm+leaky forward",
         lambda: comp.norm_leaky_forward(h, mean.astype(np.float32), istd, gamma, beta, 0.2),
         numpy_norm_leaky),
        ("group max (k=16)",
         lambda: comp.group_max(h, 16),
         lambda: (h.reshape(rows // 16, 16, f).max(1),
                  h.reshape(rows // 16, 16, f).argmax(1))),
        ("leaky forward",
         lambda: comp.leaky_forward(h, 0.2),
         lambda: np.where(h < 0, h * np.float32(0.2), h)),
    ]
    for label, fast_fn, slow_fn in pairs:
        fast = timeit(fast_fn)
        slow = timeit(slow_fn)
        print(f"{label:>22} {fast * 1e3:>10.1f}ms {slow * 1e3:>10.1f}ms {slow / fast:>8.1f}x")

    out_fast, mask_fast = comp.norm_leaky_forward(
        h, mean.astype(np.float32), istd, gamma, beta, 0.2)
    out_np, mask_np = numpy_norm_leaky()
    assert np.allclose(out_fast, out_np, atol=1e-5)
    assert np.array_equal(mask_fast, mask_np)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true", help="smaller sizes")
    args = parser.parse_args()
    print(f"compiled k-NN backend available: {compiled_available()}")
    print(f"compiled fastops available: {fastops.compiled_active()}")
    bench_knn(args.quick)
    bench_fastops(args.quick)


if __name__ == "__main__":
    main()
