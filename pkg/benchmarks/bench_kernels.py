"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--steps N] [--repeat R]
"""

import argparse
import time

import numpy as np

from socest import _kernels_py

try:
    from socest import _kernels as _compiled
except ImportError:
    _compiled = None


def inputs(n: int):
    rng = np.random.default_rng(0)
    t = np.arange(float(n))
    cur = np.repeat(rng.normal(0, 5, n // 100 + 1), 100)[:n]
    v = 3.7 + rng.normal(0, 0.005, n)
    c_soc = np.array([[0.0, 0.1, 0.5, 0.9, 1.0]])
    c_ocv = np.array([[3.0, 3.4, 3.7, 4.0, 4.2]])
    return t, cur, v, c_soc, c_ocv


def cases(k, n: int):
    t, cur, v, c_soc, c_ocv = inputs(n)
    ptab = np.array([[0.008, 0.004, 10.0, 0.006, 120.0, 18000.0]])
    idx = np.zeros(n, np.int64)
    p0 = np.diag([0.01, 1e-4, 1e-4]).reshape(-1)
    q = np.diag([1e-7, 1e-8, 1e-8]).reshape(-1)

    def sim():
        out = [np.empty(n + 1) for _ in range(4)]
        k.simulate_kernel(cur, np.ones(n), 0.008, 0.004, 10.0, 0.006, 120.0, 18000.0, c_soc[0], c_ocv[0],
                          0.9, 0.0, 0.0, *out)

    def cc():
        k.cc_kernel(t, cur, 18000.0, 0.9, np.empty(n))

    def ekf():
        k.ekf_kernel(t, cur, v, idx, ptab, idx, c_soc, c_ocv, np.array([5], np.int64), np.array([0.7, 0.0, 0.0]),
                     p0, q, 1e-4, False, np.empty((n, 3)), np.empty(n), np.empty(n), np.empty(n),
                     np.empty((0, 9)), np.empty((0, 9)))

    return {"simulate": sim, "cc": cc, "ekf": ekf}


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled kernels not built; timing the fallback only")
    results = {name: {case: best_of(fn, args.repeat) for case, fn in cases(k, args.steps).items()}
               for name, k in backends.items()}
    print(f"{'kernel':<10}" + "".join(f"{name:>14}" for name in backends) + ("     speedup" if len(backends) > 1 else ""))
    for case in results["python"]:
        row = f"{case:<10}" + "".join(f"{results[b][case] * 1e3:>12.2f}ms" for b in backends)
        if len(backends) > 1:
            row += f"{results['python'][case] / results['cython'][case]:>11.1f}x"
        print(row)
    print(f"{args.steps} steps, best of {args.repeat}")


if __name__ == "__main__":
    main()
