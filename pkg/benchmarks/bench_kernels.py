"""Time the numba kernels against their numpy fallbacks and check they agree.

    python benchmarks/bench_kernels.py [--repeat 5]

Run with numba available (the default). With FEWSHOT_KD_DISABLE_NUMBA=1 the
"numba" column times the undecorated Python loops instead, which is only
useful as a sanity check.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fewshot_kd import kernels


def cases(rng: np.random.Generator):
    key = np.uint64(0x1234_5678_9ABC_DEF0)
    x = rng.standard_normal((300, 32))
    c = rng.standard_normal((20, 32))
    emb = rng.standard_normal((2000, 32))
    return [
        ("splitmix_block n=100k", kernels.splitmix_block_numpy, kernels.splitmix_block_numba, (key, 0, 100_000)),
        ("sq_dists 300x20x32", kernels.sq_dists_numpy, kernels.sq_dists_numba, (x, c)),
        ("jacobi_sv 2000x32", kernels.jacobi_sv_numpy, kernels.jacobi_sv_numba, (emb,)),
    ]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    print(f"numba available: {kernels.HAS_NUMBA}")
    print(f"{'kernel':<24}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  max rel diff")
    for name, f_np, f_nb, fargs in cases(np.random.default_rng(0)):
        f_nb(*fargs)  # compile outside the timed region
        t_np = min(timeit.repeat(lambda: f_np(*fargs), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: f_nb(*fargs), number=1, repeat=args.repeat))
        a, b = f_np(*fargs), f_nb(*fargs)
        if a.dtype == np.uint64:
            diff = 0.0 if np.array_equal(a, b) else float("inf")
        else:
            diff = float(np.max(np.abs(a - b) / np.maximum(np.abs(a), 1e-300)))
        print(f"{name:<24}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}{t_np / t_nb:>10.1f}  {diff:.2e}")


if __name__ == "__main__":
    main()
