"""Wall-clock comparison of the compiled and pure-Python RK4 kernels.

    python benchmarks/bench_kernels.py --steps 2000 --points 8 --pops 2 4 8
"""

import argparse
import time

import numpy as np

from orbit_tracker.kernels import backends


def _problem(n_pop, n_points, steps, seed):
    rng = np.random.default_rng(seed)
    dim = 2 * n_points
    w = 0.3 * rng.standard_normal((n_pop, n_pop)) / np.sqrt(n_pop)
    alpha = 1.0 + np.abs(np.linalg.eigvals(w)).max()
    a = w - alpha * np.eye(n_pop)
    a[0, 0] -= 1.0
    c = alpha - w.sum(axis=1)
    c[0] += 1.0
    t = np.linspace(0.0, 1.0, 2 * steps + 1)[:, None]
    inputs = np.sin(t + rng.standard_normal(dim))
    x0 = rng.standard_normal((n_pop, dim))
    return x0, a, c, inputs


def _best_of(fn, args, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--points", type=int, default=8)
    p.add_argument("--pops", type=int, nargs="+", default=[2, 4, 8])
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--dt", type=float, default=0.01)
    args = p.parse_args(argv)

    fns = backends()
    if "compiled" not in fns:
        print("compiled kernel not built; only the python backend is available")
    print(f"{'pops':>5} {'backend':>9} {'seconds':>10} {'speedup':>8} {'max diff':>10}")
    for n_pop in args.pops:
        x0, a, c, inputs = _problem(n_pop, args.points, args.steps, seed=n_pop)
        ref_time, ref = _best_of(fns["python"], (x0, a, c, args.dt, inputs), args.repeats)
        print(f"{n_pop:>5} {'python':>9} {ref_time:>10.4f} {1.0:>8.1f} {0.0:>10.1e}")
        if "compiled" in fns:
            t, out = _best_of(fns["compiled"], (x0, a, c, args.dt, inputs), args.repeats)
            diff = max(float(np.abs(out[0] - ref[0]).max()), float(np.abs(out[4] - ref[4]).max()))
            print(f"{n_pop:>5} {'compiled':>9} {t:>10.4f} {ref_time / t:>8.1f} {diff:>10.1e}")


if __name__ == "__main__":
    main()
