"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from latticekam import _kernels, build_grid, builtin_model
from latticekam.hj import BACKWARD, _level_rows, _targets


def _best(fn, repeat):
    fn()  # warm-up (jit compilation for the numba path)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench_advance(d, N, K, repeat):
    g = build_grid(d, N, K)
    model = builtin_model(f"mechanical-{d}d")
    ks = np.arange(g.period_steps, dtype=np.int64)
    args = (
        0.1 * np.sin(2 * np.pi * g.coords(np.arange(g.n_nodes))).sum(axis=1),
        _targets(g),
        np.mod(ks, 2),
        g.neighbors,
        _level_rows(model, g, ks),
        np.full(d, 0.3),
        g.tau,
        g.h,
        BACKWARD,
        False,
    )
    out = {"numpy": _best(lambda: _kernels._advance_quadratic_np(*args), repeat)}
    if _kernels.HAVE_NUMBA:
        out["numba"] = _best(lambda: _kernels._advance_quadratic_nb(*args), repeat)
    return f"advance d={d} N={N} K={K} ({g.period_steps} steps)", out


def bench_propagate(d, N, repeat, steps=200):
    g = build_grid(d, N, N)
    rng = np.random.default_rng(1)
    src = g.parity_index(1)
    rho = rng.random((src.size, 2 * d))
    rho /= rho.sum(axis=1, keepdims=True)
    p = np.zeros(g.n_nodes)
    p[src] = 1.0 / src.size

    def run(kernel):
        for _ in range(steps):
            kernel(p, src, g.neighbors, rho)

    out = {"numpy": _best(lambda: run(_kernels._propagate_np), repeat)}
    if _kernels.HAVE_NUMBA:
        out["numba"] = _best(lambda: run(_kernels._propagate_nb), repeat)
    return f"propagate d={d} N={N} ({steps} steps)", out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    cases = [
        bench_advance(1, 64, 512, args.repeat),
        bench_advance(1, 256, 2048, args.repeat),
        bench_advance(2, 32, 128, args.repeat),
        bench_propagate(1, 256, args.repeat),
        bench_propagate(2, 64, args.repeat),
    ]
    print(f"{'case':45s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s}")
    for name, t in cases:
        nb = t.get("numba", float("nan"))
        print(f"{name:45s} {t['numpy']:10.4f} {nb:10.4f} {t['numpy'] / nb:8.1f}")


if __name__ == "__main__":
    main()
