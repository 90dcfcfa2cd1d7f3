"""Time the CRF kernels: compiled extension against the numpy fallback.

    python benchmarks/bench_crf.py --lengths 10,30,60 --tags 9,17 --repeat 200
"""
import argparse
import sys
import timeit

import numpy as np

from deptrigger.numerics import kernels


def bench(impl, E, T, repeat):
    out = {}
    for name in ("forward", "backward", "viterbi"):
        fn = getattr(impl, name)
        fn(E, T)  # warm-up
        out[name] = min(timeit.repeat(lambda: fn(E, T), number=repeat, repeat=3)) / repeat
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--lengths", default="10,30,60")
    p.add_argument("--tags", default="9,17")
    p.add_argument("--repeat", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)

    compiled = kernels.compiled_kernels()
    if compiled is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first",
              file=sys.stderr)
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'L':>4} {'K':>4} {'kernel':>9} {'numpy us':>10} {'cython us':>10} {'speedup':>8}")
    for L in (int(x) for x in args.lengths.split(",")):
        for K in (int(x) for x in args.tags.split(",")):
            E = rng.normal(size=(L, K))
            T = rng.normal(size=(K + 2, K + 2))
            py = bench(kernels.python_kernels, E, T, args.repeat)
            cy = bench(compiled, E, T, args.repeat)
            for name in py:
                print(f"{L:4d} {K:4d} {name:>9} {1e6 * py[name]:10.1f} {1e6 * cy[name]:10.1f} "
                      f"{py[name] / cy[name]:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
