"""Compare the compiled and numpy row-selection kernels.

    python benchmarks/bench_kernels.py [--rows 9248] [--width 289] [--k 32]
"""

import argparse
import timeit

import numpy as np

from sparsett import _kernels


def bench(kern, m, k, repeat):
    idx = kern.topk_indices(m, k)
    vals = kern.gather_rows(m, idx)
    t_topk = min(timeit.repeat(lambda: kern.topk_indices(m, k), number=1, repeat=repeat))
    t_gather = min(timeit.repeat(lambda: kern.gather_rows(m, idx), number=1, repeat=repeat))
    t_scatter = min(timeit.repeat(lambda: kern.scatter_rows(vals, idx, m.shape[1]), number=1, repeat=repeat))
    return t_topk, t_gather, t_scatter


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=9248, help="default: batch 8 x 4 heads x 17x17 queries")
    p.add_argument("--width", type=int, default=289)
    p.add_argument("--k", type=int, default=32)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    args = p.parse_args()

    m = np.random.default_rng(0).normal(size=(args.rows, args.width)).astype(args.dtype)
    backends = [_kernels.pure] + ([_kernels.compiled] if _kernels.compiled is not None else [])
    print(f"rows={args.rows} width={args.width} k={args.k} dtype={args.dtype}")
    print(f"{'backend':<8s} {'topk ms':>9s} {'gather ms':>10s} {'scatter ms':>11s}")
    results = {}
    for kern in backends:
        t = bench(kern, m, args.k, args.repeat)
        results[kern.BACKEND] = t
        print(f"{kern.BACKEND:<8s} {t[0] * 1e3:9.2f} {t[1] * 1e3:10.2f} {t[2] * 1e3:11.2f}")
    if len(results) == 2:
        a, b = results["numpy"], results["cython"]
        print("speedup  " + "  ".join(f"{x / y:8.1f}x" for x, y in zip(a, b)))
    else:
        print("compiled kernels not built; only the numpy fallback was timed")


if __name__ == "__main__":
    main()
