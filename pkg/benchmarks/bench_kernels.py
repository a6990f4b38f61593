"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--n 2000] [--repeat 3]

Each row also confirms the two backends return identical output.
"""
import argparse
import time

import numpy as np

from mamifuse import _pykernels
from mamifuse.synthetic import calibrated_labels

try:
    from mamifuse import _kernels
except ImportError:
    _kernels = None


def _best(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def _equal(a, b):
    if isinstance(a, tuple):
        return len(a) == len(b) and all(_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def _cases(n, k, seed):
    rng = np.random.default_rng(seed)
    labels = calibrated_labels(n, rng).astype(np.uint8)
    tiebreak = rng.random((n, k))
    folds = _pykernels.iterative_stratify(labels, k, tiebreak)
    pred = rng.integers(0, 2, labels.shape).astype(np.uint8)
    probs = rng.random((n, 5))
    mis = rng.random(n)
    return {
        "iterative_stratify": lambda m: m.iterative_stratify(labels, k, tiebreak),
        "swap_refine": lambda m: m.swap_refine(labels, folds.copy(), k, n),
        "confusion_counts": lambda m: m.confusion_counts(pred, labels),
        "hierarchy_correct": lambda m: m.hierarchy_correct(probs, mis, 0.5, True),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the Python backend is available")
    print(f"n={args.n} k={args.k} best of {args.repeat}")
    print(f"{'kernel':<20}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}  same")
    for name, call in _cases(args.n, args.k, args.seed).items():
        t_py, out_py = _best(lambda: call(_pykernels), args.repeat)
        if _kernels is None:
            print(f"{name:<20}{t_py * 1e3:>14.2f}{'-':>14}{'-':>10}  -")
            continue
        t_cy, out_cy = _best(lambda: call(_kernels), args.repeat)
        same = _equal(out_py, out_cy)
        print(f"{name:<20}{t_py * 1e3:>14.2f}{t_cy * 1e3:>14.2f}{t_py / max(t_cy, 1e-9):>9.1f}x  {same}")


if __name__ == "__main__":
    main()
