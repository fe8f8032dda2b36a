"""Timing comparison between the compiled extension and the pure fallback.

Run as: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from qreset.constants import TWO_PI
from qreset.kernels import available_backends, get_backend

P = dict(g=TWO_PI * 68e6, G=TWO_PI * 74e6, gamma0=31e6, theta=1.3092e9)


def time_call(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(backend, repeat):
    k = get_backend(backend)
    rng = np.random.default_rng(0)
    out = {}

    ctl_point = (TWO_PI * 9.5e9, TWO_PI * 10e9, TWO_PI * 10.6e9)
    out["eigh3 (1k points)"] = time_call(
        lambda: [k.eigh3(*ctl_point, P["g"], P["G"]) for _ in range(1000)],
        repeat) / 1000

    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho1 = (a + a.conj().T) / 2
    out["generator apply (1k)"] = time_call(
        lambda: [k.liouvillian_apply(rho1, *ctl_point, **P)
                 for _ in range(1000)],
        repeat) / 1000

    n = 500
    t = np.linspace(0.0, 50e-9, n + 1)
    ctrl = np.ascontiguousarray(np.vstack([
        np.full(n + 1, TWO_PI * 9.5e9),
        np.full(n + 1, TWO_PI * 10.0e9),
        TWO_PI * (11.5e9 - 1.5e9 * t / t[-1]),
    ]))
    rho = np.zeros((3, 4, 4), dtype=complex)
    for l in range(3):
        rho[l, l + 1, l + 1] = 1.0

    def prop():
        work = rho.copy()
        k.propagate(work, ctrl, t[1] - t[0], 0, **P)

    out["propagate 50 ns (3 states)"] = time_call(prop, repeat)

    chi = np.empty((n + 1, 3, 4, 4), dtype=complex)
    chi[:] = np.eye(4) / 3.0
    shapes = np.ones((3, n + 1))
    active = np.array([0, 0, 1], dtype=np.uint8)

    def sweep():
        work = rho.copy()
        new = np.empty_like(ctrl)
        k.krotov_sweep(work, chi, ctrl, new, active, shapes,
                       np.full(3, 1e-6), t[1] - t[0], 0, **P)

    out["update sweep 50 ns"] = time_call(sweep, repeat)
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = available_backends()
    results = {b: bench(b, args.repeat) for b in backends}
    names = list(next(iter(results.values())))
    width = max(len(n) for n in names)
    header = f"{'kernel':<{width}}" + "".join(f"{b:>14}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name in names:
        row = f"{name:<{width}}"
        for b in backends:
            row += f"{results[b][name] * 1e3:>12.3f}ms"
        if len(backends) == 2:
            row += f"{results['pure'][name] / results['compiled'][name]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
