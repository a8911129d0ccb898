"""Time the compiled and numpy kernel backends on representative workloads.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, backend) with the best wall time over the
repeats, plus the largest absolute difference between the two backends'
outputs.  Compilation happens in a warm-up call and is not timed.
"""

import argparse
import time

import numpy as np

from infocomb import _kernels


def best_time(fn, repeat):
    fn()  # warm-up (JIT compile, caches)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def recursion_case(rng, reps=20_000, T=200):
    u = rng.standard_normal((reps, T))
    a = np.full(T, 0.6)
    b = np.ones(T)
    init = rng.standard_normal(reps)
    return u, a, b, init


def lasso_case(rng, T=120, k=10, m=10):
    f = rng.standard_normal(T)
    X = np.outer(f, np.linspace(0.5, 1.5, k)) + rng.standard_normal((T, k))
    Y = X @ rng.standard_normal((k, m)) * 0.3 + rng.standard_normal((T, m))
    X -= X.mean(0)
    Y -= Y.mean(0)
    G = X.T @ X / T
    C = X.T @ Y / T
    lam = 0.05 * np.max(np.linalg.norm(C, axis=1))
    return G, C, lam


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    if _kernels.linear_recursion_numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)

    u, a, b, init = recursion_case(rng)
    rec = {
        "numba": lambda: _kernels.linear_recursion_numba(u, a, b, init),
        "numpy": lambda: _kernels.linear_recursion_numpy(u, a, b, init),
    }
    diff = np.max(np.abs(rec["numba"]() - rec["numpy"]()))
    print(f"linear_recursion  {u.shape[0]} paths x {u.shape[1]} steps  max|diff| {diff:.2e}")
    for name, fn in rec.items():
        print(f"  {name:<6} {best_time(fn, args.repeat) * 1e3:9.2f} ms")

    G, C, lam = lasso_case(rng)
    sweeps = 2000

    def cd(impl):
        B = np.zeros_like(C)
        obj = np.empty(1)
        # tol 0 forces exactly ``sweeps`` sweeps for a like-for-like timing
        impl(G, C, B, lam, 0.0, sweeps, obj)
        return B

    cds = {"numba": lambda: cd(_kernels.group_cd_numba),
           "numpy": lambda: cd(_kernels.group_cd_numpy)}
    diff = np.max(np.abs(cds["numba"]() - cds["numpy"]()))
    print(f"group_cd          k={G.shape[0]} m={C.shape[1]}, {sweeps} sweeps  max|diff| {diff:.2e}")
    for name, fn in cds.items():
        print(f"  {name:<6} {best_time(fn, args.repeat) * 1e3:9.2f} ms")

    B = cds["numba"]()
    kkts = {"numba": lambda: _kernels.group_kkt_numba(G, C, B, lam),
            "numpy": lambda: _kernels.group_kkt_numpy(G, C, B, lam)}
    diff = np.max(np.abs(np.subtract(kkts["numba"](), kkts["numpy"]())))
    print(f"group_kkt         k={G.shape[0]} m={C.shape[1]}  max|diff| {diff:.2e}")
    for name, fn in kkts.items():
        print(f"  {name:<6} {best_time(fn, args.repeat) * 1e6:9.2f} us")


if __name__ == "__main__":
    main()
