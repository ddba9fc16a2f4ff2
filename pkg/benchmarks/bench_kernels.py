"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints the best-of-N wall time of each kernel on both backends and the
speed-up. Both backends run on identical inputs, and their outputs are
compared so a speed-up never hides a disagreement.
"""
import argparse
import time

import numpy as np

from spinlsi._backend import compiled_kernels, python_kernels
from spinlsi.dynamics import ChainSpec, _draws


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases():
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(200_000, 3))

    def cc(k):
        return lambda: k.cc_distance(pts)

    R, H, W, m = 16, 6, 6, 32
    spins0 = np.ascontiguousarray(rng.normal(scale=0.5, size=(R, H + 2, W + 2, 3)))
    steps, u = _draws(ChainSpec(seed=1, inner_steps=m), (0,), 0, 0, (R, H, W, m), 3)

    def sweep(k):
        def go():
            s = spins0.copy()
            d = np.ascontiguousarray(python_kernels.distance(s, 1))
            acc = k.sweep_parity(s, d, 0, 1, 4, 3, 0.02, steps, u)
            return s, acc
        return go

    line0 = np.ascontiguousarray(rng.normal(scale=0.7, size=(256, 6, 6, 1)))
    nodes = np.linspace(-40 ** 0.25, 40 ** 0.25, 801)
    U = rng.random((256, 4, 4))

    def exact(k):
        def go():
            s = line0.copy()
            k.resample_exact_line(s, 0, 4, 3, 0.05, nodes, U)
            return s
        return go

    return [("cc_distance 2e5 points", cc), ("heisenberg sweep 16x6x6x32", sweep),
            ("exact line block update 256x4x4", exact)]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    ck = compiled_kernels()
    if ck is None:
        print("compiled extension not built; only the numpy fallback is available")
    print(f"{'kernel':36s} {'numpy s':>10s} {'cython s':>10s} {'speed-up':>9s} {'max diff':>9s}")
    for name, make in cases():
        tp, op = best_of(make(python_kernels), args.repeat)
        if ck is None:
            print(f"{name:36s} {tp:10.4f}")
            continue
        tc, oc = best_of(make(ck), args.repeat)
        a = op[0] if isinstance(op, tuple) else op
        b = oc[0] if isinstance(oc, tuple) else oc
        diff = float(np.max(np.abs(np.asarray(a) - np.asarray(b))))
        print(f"{name:36s} {tp:10.4f} {tc:10.4f} {tp / tc:8.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
