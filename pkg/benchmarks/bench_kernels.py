"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 4096] [--cols 96] [--repeat 20]

Prints one line per kernel with the median time of each backend and the
speedup. Exits non-zero if the compiled extension is not built.
"""
import argparse
import sys
import timeit

import numpy as np

from videoswin import kernels


def cases(rows, cols, rng):
    x = rng.normal(size=(rows, cols)).astype(np.float32)
    g = rng.normal(size=(rows, cols)).astype(np.float32)
    gamma = rng.normal(size=cols).astype(np.float32)
    beta = rng.normal(size=cols).astype(np.float32)
    y = kernels.python_backend.softmax_fwd(x)
    _, xhat, rstd = kernels.python_backend.layernorm_fwd(x, gamma, beta, 1e-5)
    return {
        "softmax_fwd": lambda k: k.softmax_fwd(x),
        "softmax_bwd": lambda k: k.softmax_bwd(y, g),
        "layernorm_fwd": lambda k: k.layernorm_fwd(x, gamma, beta, 1e-5),
        "layernorm_bwd": lambda k: k.layernorm_bwd(g, xhat, rstd, gamma),
        "gelu_fwd": lambda k: k.gelu_fwd(x),
        "gelu_bwd": lambda k: k.gelu_bwd(x, g),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--rows", type=int, default=4096)
    ap.add_argument("--cols", type=int, default=96)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if kernels.compiled_backend is None:
        print("compiled backend not built; run `pip install --no-build-isolation -e .`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"rows={args.rows} cols={args.cols} float32, median of {args.repeat} runs")
    print(f"{'kernel':<15} {'python ms':>10} {'compiled ms':>12} {'speedup':>8}")
    for name, fn in cases(args.rows, args.cols, rng).items():
        times = {}
        for label, impl in (("python", kernels.python_backend), ("compiled", kernels.compiled_backend)):
            runs = timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat)
            times[label] = float(np.median(runs)) * 1e3
        print(f"{name:<15} {times['python']:>10.3f} {times['compiled']:>12.3f} {times['python'] / times['compiled']:>7.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
