"""Time the numba and numpy kernel backends on representative inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Numba compile time is excluded by a warm-up call. Results also confirm that
both backends return the same values.
"""
import argparse
import time

import numpy as np

from microquant.boundary import HoughParams, hough_tables
from microquant.kernels import _numpy as npk

try:
    from microquant.kernels import _numba as nbk
except ImportError:  # numba missing
    nbk = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def pair_case(n, seed=0):
    rng = np.random.default_rng(seed)
    x, y = rng.random(n), rng.random(n)
    radii = np.linspace(0, 0.25, 64)
    return (x, y, x, y, radii, 1.0, 1.0, True, True)


def hough_case(size, seed=0):
    rng = np.random.default_rng(seed)
    m = (rng.random((size, size)) < 0.005).astype(np.uint8)
    for _ in range(6):
        x0, y0, x1, y1 = rng.integers(0, size, 4)
        t = np.linspace(0, 1, 2 * size)
        m[(y0 + t * (y1 - y0)).astype(int), (x0 + t * (x1 - x0)).astype(int)] = 1
    order = np.flatnonzero(m)
    order = order[rng.permutation(order.size)]
    cos_t, sin_t = hough_tables(HoughParams())
    return (m, order, cos_t, sin_t, 4 * size + 1, 50, 30, 10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)

    cases = [(f"pair_sums n={n}", "pair_sums", pair_case(n)) for n in (200, 1000, 4000)]
    cases += [(f"hough_ppht {s}x{s}", "hough_ppht", hough_case(s)) for s in (256, 512)]

    print(f"{'case':<22}{'numpy s':>12}{'numba s':>12}{'speedup':>10}  same")
    for label, name, args in cases:
        t_np, out_np = best_of(lambda: getattr(npk, name)(*args), a.repeat)
        if nbk is None:
            print(f"{label:<22}{t_np:>12.4f}{'n/a':>12}{'':>10}  -")
            continue
        getattr(nbk, name)(*args)  # compile
        t_nb, out_nb = best_of(lambda: getattr(nbk, name)(*args), a.repeat)
        same = np.allclose(out_np, out_nb, rtol=1e-12, atol=1e-12) if out_np.shape == out_nb.shape else False
        print(f"{label:<22}{t_np:>12.4f}{t_nb:>12.4f}{t_np / t_nb:>9.1f}x  {same}")


if __name__ == "__main__":
    main()
