"""Time the solver kernels on every available backend.

    python3 benchmarks/bench_kernels.py [--n 100] [--repeat 200]

Each backend solves the same seeded problems; the script also reports the
largest disagreement between backends.
"""

import argparse
import time

import numpy as np

from dpcausal._backend import available_backends


def problems(n, count, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        pi = rng.uniform(0.1, 0.9, n)
        t = (rng.random(n) < pi).astype(float)
        rows = t == 1
        y = 3 + rng.normal(0, 1.2, rows.sum())
        y[rng.random(y.size) < 0.1] += 15
        bw = 1 / pi[rows]
        u = 3 + rng.normal(0, 0.5, n)
        v2 = np.full(n, 0.72)
        w2 = (t - pi) / pi
        coef = -(t - pi) / (n * pi)
        out.append((y, bw, u, v2, w2, coef))
    return out


def run_ipw(k, probs, gamma):
    res = []
    for y, bw, *_ in probs:
        mu0 = k.weighted_median(y, bw)
        res.append(k.dp_ipw_solve(y, bw, gamma, mu0, -1.0, 1e-8, 500, 1e-6)[0])
    return np.array(res)


def run_dr(k, probs, gamma):
    res = []
    for y, bw, u, v2, w2, coef in probs:
        n = u.size
        mu0 = k.weighted_median(y, bw)
        res.append(
            k.dp_dr_solve(y, bw, u, v2, w2, gamma, mu0, -1.0, 1e-8, 500, 1e-6, bw / n, coef, 0.5)[0]
        )
    return np.array(res)


def timed(fn, *args):
    t0 = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--gamma", type=float, default=0.5)
    args = ap.parse_args()
    probs = problems(args.n, args.repeat)
    backends = available_backends()
    results = {}
    print(f"n={args.n} problems={args.repeat} gamma={args.gamma}")
    print(f"{'backend':<10}{'kernel':<8}{'total_s':>10}{'per_solve_us':>14}")
    for name, k in backends.items():
        for label, fn in (("ipw", run_ipw), ("dr", run_dr)):
            out, dt = timed(fn, k, probs, args.gamma)
            results[(name, label)] = (out, dt)
            print(f"{name:<10}{label:<8}{dt:>10.3f}{1e6 * dt / args.repeat:>14.1f}")
    if len(backends) > 1:
        for label in ("ipw", "dr"):
            a, ta = results[("compiled", label)]
            b, tb = results[("python", label)]
            print(f"{label}: max |diff| = {np.max(np.abs(a - b)):.2e}, speedup = {tb / ta:.1f}x")


if __name__ == "__main__":
    main()
