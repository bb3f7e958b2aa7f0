"""Timing comparison of the compiled kernels against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py``. Both backends are loaded
directly, so the POWERSPLIT_PURE switch is irrelevant here; each kernel is
also cross-checked for agreement before timing.
"""

from __future__ import annotations

import time

import numpy as np

from powersplit._kernels import _pure

try:
    from powersplit._kernels import _native
except ImportError:
    _native = None


def timeit(fn, *args, repeat: int = 5):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _close(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_close(x, y) for x, y in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-12, equal_nan=True)


def bench(name, args_fn, repeat=5):
    args = args_fn()
    t_pure, ref = timeit(getattr(_pure, name), *args, repeat=repeat)
    if _native is None:
        print(f"{name:<22} pure {t_pure * 1e3:9.3f} ms   (no compiled backend)")
        return
    t_nat, out = timeit(getattr(_native, name), *args, repeat=repeat)
    ok = "agree" if _close(ref, out) else "MISMATCH"
    speedup = t_pure / t_nat if t_nat > 0 else float("inf")
    print(f"{name:<22} pure {t_pure * 1e3:9.3f} ms   native {t_nat * 1e3:9.3f} ms"
          f"   x{speedup:6.1f}   {ok}")


def main():
    rng = np.random.default_rng(0)

    def hmm_args():
        T, J = 20_000, 8
        logtrans = np.log(rng.dirichlet(np.ones(J), size=J))
        loglik = rng.normal(size=(T, J))
        return np.log(np.full(J, 1.0 / J)), logtrans, loglik

    def hmm_back_args():
        _, logtrans, loglik = hmm_args()
        return logtrans, loglik

    def hsmm_args():
        T, J, dmax = 3_000, 6, 150
        pi = rng.dirichlet(np.ones(J - 1), size=J)
        logtrans = np.full((J, J), -np.inf)
        for j in range(J):
            logtrans[j, np.arange(J) != j] = np.log(pi[j])
        d = rng.dirichlet(np.ones(dmax), size=J)
        logdur = np.log(d)
        tail = np.concatenate([np.ones((J, 1)),
                               1.0 - np.cumsum(d, axis=1)], axis=1)
        logtail = np.log(np.maximum(tail, 1e-300))
        loglik = rng.normal(size=(T, J))
        return logtrans, logdur, logtail, loglik, dmax

    def fbpf_args():
        N, K, Jm, M = 2_000, 4, 3, 36
        rows = np.log(rng.dirichlet(np.ones(Jm), size=(N, K)))
        theta = rng.normal(500.0, 100.0, size=(N, K, Jm))
        var = np.full(K, 2500.0)
        joint = rng.integers(0, Jm, size=(M, K)).astype(np.int32)
        return rows, theta, var, joint, 1234.5

    def resample_args():
        w = rng.dirichlet(np.ones(100_000))
        return w, 0.37 / len(w)

    print(f"compiled backend present: {_native is not None}")
    bench("hmm_forward", hmm_args)
    bench("hmm_backward", hmm_back_args)
    bench("hsmm_backward", hsmm_args)
    bench("fbpf_accumulate", fbpf_args)
    bench("systematic_counts", resample_args)


if __name__ == "__main__":
    main()
