#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Runs each hot kernel on a mid-size synthetic workload and prints a table of
wall times plus a result-parity check.  Usage:

    python scripts/bench_kernels.py [--repeat 3]

The active pipeline backend is chosen by REACHSYN_KERNELS (auto/numba/numpy);
this script always loads both implementations directly.
"""

import argparse
import time

import numpy as np

from reachsyn.kernels import numpy_impl

try:
    from reachsyn.kernels import numba_impl
except ImportError:
    numba_impl = None


def timeit(fn, repeat):
    best = float("inf")
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def bench_lambda(impl, data):
    xs, r1, r2, J, centers, delta = data
    return lambda: impl.lambda_minmax(xs, r1, r2, J, centers, delta)


def bench_count(impl, data):
    t_lo, t_hi, noise, dom_lo, dom_hi, cw, cells, cap = data
    return lambda: impl.count_target_boxes(t_lo, t_hi, noise, dom_lo, dom_hi,
                                           cw, cells, cap)


def bench_cp(impl, data):
    k, N, beta = data
    return lambda: (impl.cp_lower_many(k, N, beta), impl.cp_upper_many(k, N, beta))


def bench_vi(impl, data):
    return lambda: impl.vi_solve_inf(*data, 1e-8, 2000)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    # lambda max-min: 50k samples x 121 voxels
    m, nvox = 50_000, 121
    xs = rng.uniform(-1, 1, (m, 2))
    r1 = rng.uniform(0.05, 0.3, m)
    r2 = r1 + rng.uniform(0.1, 0.4, m)
    lam_data = (xs, r1, r2, np.abs(rng.normal(size=(2, 2))),
                rng.uniform(-1, 1, (nvox, 2)), np.array([0.05, 0.05]))

    # counting: 400 target boxes x 5k noise samples on a 40x40 grid
    dom_lo, dom_hi = np.array([-10.0, -10.0]), np.array([10.0, 10.0])
    cells = np.array([40, 40], dtype=np.int64)
    cw = (dom_hi - dom_lo) / cells
    c = rng.uniform(-9, 9, (400, 2))
    h = rng.uniform(0.2, 0.6, (400, 2))
    count_data = (c - h, c + h, rng.normal(0, 0.5, (5000, 2)),
                  dom_lo, dom_hi, cw, cells, 200)

    # Clopper-Pearson bounds for 50k transitions
    cp_data = (rng.integers(0, 10_001, size=50_000), 10_000, 1e-7)

    # robust VI: 600 states, 2 rows each, ~8 successors
    S, rows_per = 600, 2
    row_state, row_ptr, succ, lo, hi = [], [0], [], [], []
    for s in range(S - 2):
        for _ in range(rows_per):
            mrow = int(rng.integers(4, 9))
            t = np.sort(rng.choice(S, size=mrow, replace=False))
            mu = rng.dirichlet(np.ones(mrow))
            row_state.append(s)
            row_ptr.append(row_ptr[-1] + mrow)
            succ.extend(t.tolist())
            lo.extend((mu * rng.uniform(0, 1, mrow)).tolist())
            hi.extend(np.minimum(mu + rng.uniform(0, 0.4, mrow), 1).tolist())
    term = np.zeros(S, dtype=np.uint8)
    term[[S - 2, S - 1]] = 1
    tval = np.zeros(S)
    tval[S - 1] = 1.0
    row_state = np.array(row_state, dtype=np.int64)
    vi_data = (term, tval,
               np.searchsorted(row_state, np.arange(S + 1)).astype(np.int64),
               row_state, np.array(row_ptr, dtype=np.int64),
               np.array(succ, dtype=np.int64), np.array(lo), np.array(hi))

    benches = [
        ("lambda_minmax", bench_lambda, lam_data),
        ("count_target_boxes", bench_count, count_data),
        ("cp_bounds", bench_cp, cp_data),
        ("vi_solve_inf", bench_vi, vi_data),
    ]

    print(f"{'kernel':<20} {'numpy':>10} {'numba':>10} {'speedup':>9}  parity")
    for name, make, data in benches:
        t_np, r_np = timeit(make(numpy_impl, data), args.repeat)
        if numba_impl is None:
            print(f"{name:<20} {t_np:>9.3f}s {'n/a':>10}")
            continue
        make(numba_impl, data)()  # JIT warm-up outside the timing
        t_nb, r_nb = timeit(make(numba_impl, data), args.repeat)
        flat_np = np.concatenate([np.ravel(np.asarray(x, dtype=np.float64))
                                  for x in (r_np if isinstance(r_np, tuple) else (r_np,))])
        flat_nb = np.concatenate([np.ravel(np.asarray(x, dtype=np.float64))
                                  for x in (r_nb if isinstance(r_nb, tuple) else (r_nb,))])
        ok = flat_np.shape == flat_nb.shape and np.allclose(flat_np, flat_nb, atol=1e-8)
        print(f"{name:<20} {t_np:>9.3f}s {t_nb:>9.3f}s {t_np / t_nb:>8.1f}x  "
              f"{'ok' if ok else 'MISMATCH'}")


if __name__ == "__main__":
    main()
