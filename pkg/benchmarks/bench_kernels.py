"""Time im2col / col2im for the compiled and the numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes match the first two stages of the default encoder on a 16-clip batch
of 128x247 log-mel spectrograms.
"""

import argparse
import timeit

import numpy as np

from birdssl import _kernels_py, kernels

CASES = (
    ("stage1 3x3/2", (16, 128, 247, 1), 3, 2, 1),
    ("stage2 3x3/2", (16, 64, 124, 16), 3, 2, 1),
)


def backends():
    out = {"python": _kernels_py}
    try:
        from birdssl import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    rng = np.random.default_rng(0)
    impls = backends()
    print(f"active backend: {kernels.BACKEND}")
    for label, shape, k, stride, pad in CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        cols = kernels.im2col(x, k, stride, pad)
        for name, impl in impls.items():
            t_fwd = min(timeit.repeat(lambda: kernels.im2col(x, k, stride, pad, impl=impl),
                                      number=1, repeat=args.repeat))
            t_bwd = min(timeit.repeat(lambda: kernels.col2im(cols, shape, k, stride, pad, impl=impl),
                                      number=1, repeat=args.repeat))
            print(f"{label:14s} {name:7s} im2col {1e3 * t_fwd:8.2f} ms   col2im {1e3 * t_bwd:8.2f} ms")


if __name__ == "__main__":
    main()
