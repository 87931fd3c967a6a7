"""Time the compiled and numpy kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per (kernel, workload) with the best wall time of each
backend and the speed-up.  Exits non-zero if the backends disagree.
"""

import argparse
import time

import numpy as np

from rosgd import _pykernels
from rosgd.families import generate_quadratic_family
from rosgd.optimizers import default_schedule

try:
    from rosgd import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def best_of(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def workloads():
    rng = np.random.default_rng(0)
    for n, T in [(1, 8192), (64, 512), (200, 2048)]:
        fam = generate_quadratic_family(5, T, 1.0, 1.0, seed=0)
        B, lam, c, A = fam.kernel_args()
        kind, p0, p1 = fam.domain.kernel_params()
        src = rng.integers(0, T, size=(n, T))
        eta = default_schedule("reservoir", fam).steps(T)
        args = (B, lam, c, A, src, eta, fam.domain.midpoint, kind, p0, p1)
        yield f"sgd_final n={n} T={T}", "sgd_final", args
        yield f"sgd_paths n={n} T={T}", "sgd_paths", args
    for T in (1024, 65536):
        yield f"fisher_yates T={T}", "fisher_yates", (rng.random(T - 1),)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _ckernels is None:
        print("compiled extension not available; only the numpy backend can be timed")
    ok = True
    print(f"{'workload':32s} {'numpy [s]':>11s} {'cython [s]':>11s} {'speed-up':>9s}")
    for label, name, a in workloads():
        t_py, out_py = best_of(lambda: getattr(_pykernels, name)(*a), args.repeat)
        if _ckernels is None:
            print(f"{label:32s} {t_py:11.5f} {'-':>11s} {'-':>9s}")
            continue
        t_c, out_c = best_of(lambda: getattr(_ckernels, name)(*a), args.repeat)
        ref = out_py[0] if isinstance(out_py, tuple) else out_py
        got = out_c[0] if isinstance(out_c, tuple) else out_c
        if not np.allclose(ref, got, rtol=0, atol=1e-12):
            ok = False
            label += "  MISMATCH"
        print(f"{label:32s} {t_py:11.5f} {t_c:11.5f} {t_py / t_c:8.1f}x")
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
