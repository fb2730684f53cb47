"""Compare the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--hits 2e7] [--tags 2e6] [--repeat 3]
"""
import argparse
import time

import numpy as np

from tdcqkd import _kernels_py, kernels
from tdcqkd.tdc_model import build_preset

try:
    from tdcqkd import _kernels as _compiled
except ImportError:
    _compiled = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hits", type=float, default=2e7)
    ap.add_argument("--tags", type=float, default=2e6)
    ap.add_argument("--window", type=float, default=500.0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    line = build_preset("TDC1_RAW")
    key = kernels.seed_key(1)
    n_hits = int(args.hits)
    rng = np.random.default_rng(0)
    n_tags = int(args.tags)
    ta = np.sort(rng.integers(0, 100 * n_tags * 1000, n_tags))
    tb = np.sort(np.concatenate([ta[::2] + rng.integers(-300, 300, ta[::2].size),
                                 rng.integers(0, 100 * n_tags * 1000, n_tags // 2)]))

    cases = {
        f"code_density ({n_hits:.0e} hits)":
            lambda m: m.code_density(line.edges, line.clock_period, key, 0, n_hits),
        f"match_greedy ({n_tags:.0e} tags/arm)":
            lambda m: m.match_greedy(ta, tb, args.window),
    }
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled kernels not built; timing the fallback only")

    print(f"{'kernel':36s}" + "".join(f"{b:>12s}" for b in backends) + f"{'speedup':>10s}")
    for name, fn in cases.items():
        row, outs = [], []
        for mod in backends.values():
            t, out = best_of(lambda: fn(mod), args.repeat)
            row.append(t)
            outs.append(out)
        if len(outs) == 2:
            pairs = zip(*outs) if isinstance(outs[0], tuple) else [outs]
            assert all(np.array_equal(x, y) for x, y in pairs), f"{name}: backends disagree"
        speed = f"{row[0] / row[1]:9.1f}x" if len(row) == 2 else ""
        print(f"{name:36s}" + "".join(f"{t:11.3f}s" for t in row) + speed)


if __name__ == "__main__":
    main()
