"""Time the compiled kernels against the numpy fallback.

Usage::

    python bench/bench_kernels.py [--events 500] [--sims 200] [--repeat 3]

Both backends are imported side by side, run on the same inputs, and
checked for identical output before timings are reported.
"""

import argparse
import time

import numpy as np

from sscontagion import _pykernels
from sscontagion.estimator import DistanceGrid
from sscontagion.geometry import EdgeTables, ray_angles
from sscontagion.rng import derive_keys
from sscontagion.synth import synth_region

try:
    from sscontagion import _kernels
except ImportError:  # extension not built
    _kernels = None


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(events, sims):
    comm = synth_region(1, events=events, process="cstr", seed=7, area=4.0e5)[0]
    ring, xy = comm.ring, comm.xy
    grid = DistanceGrid.up_to(comm.r_eff)
    tables = EdgeTables(ring, xy, grid.r_max)
    lo, hi = ring.min(axis=0), ring.max(axis=0)
    bbox = (lo[0], lo[1], hi[0], hi[1])
    prior = np.flatnonzero(comm.years <= 2016)
    n_new = int(np.sum(comm.years == 2017))
    keys = derive_keys(11, np.arange(sims))
    ca, sa = ray_angles()
    years = comm.years.astype(np.float64)
    rows = np.arange(len(xy), dtype=np.int64)

    def stack(k):
        return k.sample_uniform(ring, bbox, keys, n_new, 1000 * n_new)

    new = stack(_pykernels)
    return {
        "ray_tables": lambda k: k.ray_tables(ring, xy, ca, sa, grid.r_max),
        "sample_uniform": stack,
        "cross_hist": lambda k: k.cross_hist(xy[prior], prior, tables.packed, new,
                                             grid.r_values, tables.wtab, True),
        "forward_hist": lambda k: k.forward_hist(xy, years, rows, tables.packed, 5.0,
                                                 grid.r_values, tables.n_angles, tables.cap,
                                                 10.0, True, False),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--events", type=int, default=500)
    ap.add_argument("--sims", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not available; build with "
              "`python setup.py build_ext --inplace`")
    print(f"{'kernel':<16}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, fn in cases(args.events, args.sims).items():
        tp, ref = _best(lambda: fn(_pykernels), args.repeat)
        if _kernels is None:
            print(f"{name:<16}{tp:>12.4f}{'-':>12}{'-':>10}")
            continue
        tc, got = _best(lambda: fn(_kernels), args.repeat)
        if isinstance(ref, tuple):
            same = all(np.array_equal(a, b) for a, b in zip(ref, got))
        else:
            same = np.array_equal(ref, got)
        print(f"{name:<16}{tp:>12.4f}{tc:>12.4f}{tp / tc:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
