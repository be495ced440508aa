"""Compare the compiled and pure-Python exit-walk simulators.

Usage: python3 benchmarks/bench_walks.py [--walks N] [--repeats R]
"""
import argparse
import time

import numpy as np

from frdecomp import _walk_py

try:
    from frdecomp import _walk_ext
except ImportError:  # extension not built
    _walk_ext = None

CASES = [(1, 2), (2, 2), (2, 4), (3, 4)]  # (d, half-width in sites)


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--walks", type=int, default=100_000)
    ap.add_argument("--repeats", type=int, default=3)
    args = ap.parse_args(argv)
    print(f"{'d':>2} {'half':>4} {'python s':>10} {'cython s':>10} {'speedup':>8} {'identical':>9}")
    for d, half in CASES:
        start = np.zeros(d, dtype=np.int64)
        tp, rp = best_of(lambda: _walk_py.simulate_exits(start, half, args.walks, 7, 10 ** 7),
                         args.repeats)
        if _walk_ext is None:
            print(f"{d:>2} {half:>4} {tp:>10.4f} {'n/a':>10} {'n/a':>8} {'n/a':>9}")
            continue
        tc, rc = best_of(lambda: _walk_ext.simulate_exits(start, half, args.walks, 7, 10 ** 7),
                         args.repeats)
        same = (np.array_equal(rp[0], rc[0]) and np.array_equal(rp[2], rc[2])
                and np.allclose(rp[1], rc[1], rtol=1e-12, atol=0))
        print(f"{d:>2} {half:>4} {tp:>10.4f} {tc:>10.4f} {tp / tc:>8.1f} {str(same):>9}")


if __name__ == "__main__":
    main()
