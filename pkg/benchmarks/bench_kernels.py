"""Benchmark the compiled kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--full-scale]

The default sizes finish in a few seconds; --full-scale times the full
1536-token attention the fusion head uses at its published configuration.
"""

import argparse
import time

import numpy as np

from dvme.numerics import backend, ops


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_case(label, make_args, kernels):
    print(f"\n{label}")
    rows = []
    for name in sorted(backend.available()):
        with backend.use(name):
            args = make_args()
            for kernel_name, fn in kernels:
                rows.append((kernel_name, name, timeit(lambda: fn(*args))))
    width = max(len(r[0]) for r in rows) + 2
    for kernel_name, name, seconds in rows:
        print(f"  {kernel_name:<{width}} {name:<10} {seconds * 1e3:9.2f} ms")
    by_kernel = {}
    for kernel_name, name, seconds in rows:
        by_kernel.setdefault(kernel_name, {})[name] = seconds
    for kernel_name, timings in by_kernel.items():
        if {"compiled", "fallback"} <= set(timings):
            ratio = timings["fallback"] / timings["compiled"]
            print(f"  {kernel_name:<{width}} speedup   {ratio:9.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--full-scale", action="store_true")
    parser.add_argument("--batch", type=int, default=16)
    args = parser.parse_args()

    if backend.COMPILED is None:
        print("compiled extension not built; timing the fallback only")

    rng = np.random.default_rng(0)
    tokens = 1536 if args.full_scale else 384
    batch = args.batch

    def attn_args():
        q = np.ascontiguousarray(rng.standard_normal((batch, tokens)), dtype=np.float32)
        k = np.ascontiguousarray(rng.standard_normal((batch, tokens)), dtype=np.float32)
        v = np.ascontiguousarray(rng.standard_normal((batch, tokens)), dtype=np.float32)
        return q, k, v

    bench_case(
        f"attention forward, batch={batch}, tokens={tokens}, float32",
        attn_args,
        [("attn_forward", ops.attention_scalar_tokens)],
    )

    def attn_bwd_args():
        q, k, v = attn_args()
        return q, k, v, np.ones_like(q)

    bench_case(
        f"attention backward, batch={batch}, tokens={tokens}, float32",
        attn_bwd_args,
        [("attn_backward", ops.attention_scalar_tokens_backward)],
    )

    m, kk, n = (64, 2048, 512) if args.full_scale else (64, 512, 128)

    def matmul_args():
        return (
            rng.standard_normal((m, kk)).astype(np.float32),
            rng.standard_normal((kk, n)).astype(np.float32),
        )

    bench_case(
        f"matmul {m}x{kk} @ {kk}x{n}, float32",
        matmul_args,
        [("matmul", ops.matmul)],
    )


if __name__ == "__main__":
    main()
