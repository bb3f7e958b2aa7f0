"""Backend equivalence and resampling-count correctness.

The brute-force offspring oracle places each systematic position by linear
search; the kernels must reproduce it exactly.
"""

import numpy as np
from hypothesis import given, settings, strategies as st

from powersplit import _kernels
from powersplit._kernels import _pure

try:
    from powersplit._kernels import _native
except ImportError:
    _native = None

BACKENDS = [_pure] + ([_native] if _native is not None else [])


# oracle: offspring counts by direct placement of u0 + i/N
def offspring_oracle(weights, u0):
    N = len(weights)
    cum = np.cumsum(weights)
    counts = np.zeros(N, dtype=np.int64)
    j = 0
    for i in range(N):
        pos = u0 + i / N
        while cum[j] < pos and j < N - 1:
            j += 1
        counts[j] += 1
    return counts


def random_instance(rng, T, J):
    logtrans = np.log(rng.dirichlet(np.ones(J), size=J))
    loglik = rng.normal(size=(T, J))
    loginit = np.log(rng.dirichlet(np.ones(J)))
    return loginit, logtrans, loglik


def test_backend_flag_is_exposed():
    assert _kernels.BACKEND in ("native", "pure")
    assert _pure.BACKEND == "pure"


def test_forward_backward_agree_across_backends():
    if _native is None:
        return
    rng = np.random.default_rng(0)
    for T, J in [(1, 2), (7, 3), (40, 5)]:
        loginit, logtrans, loglik = random_instance(rng, T, J)
        a_p = _pure.hmm_forward(loginit, logtrans, loglik)
        a_n = _native.hmm_forward(loginit, logtrans, loglik)
        assert np.allclose(a_p, a_n, atol=1e-12)
        b_p = _pure.hmm_backward(logtrans, loglik)
        b_n = _native.hmm_backward(logtrans, loglik)
        assert np.allclose(b_p, b_n, atol=1e-12)


def test_hsmm_backward_agrees_across_backends():
    if _native is None:
        return
    rng = np.random.default_rng(1)
    T, J, dmax = 30, 3, 12
    logtrans = np.full((J, J), -np.inf)
    for j in range(J):
        row = rng.dirichlet(np.ones(J - 1))
        logtrans[j, np.arange(J) != j] = np.log(row)
    d = rng.dirichlet(np.ones(dmax), size=J)
    logdur = np.log(d)
    tail = np.concatenate([np.ones((J, 1)), 1.0 - np.cumsum(d, axis=1)], axis=1)
    logtail = np.log(np.maximum(tail, 1e-300))
    loglik = rng.normal(size=(T, J))
    out_p = _pure.hsmm_backward(logtrans, logdur, logtail, loglik, dmax)
    out_n = _native.hsmm_backward(logtrans, logdur, logtail, loglik, dmax)
    for a, b in zip(out_p, out_n):
        assert np.allclose(a, b, atol=1e-12)


def test_fbpf_accumulate_agrees_across_backends():
    if _native is None:
        return
    rng = np.random.default_rng(2)
    N, K, Jm, M = 50, 3, 3, 10
    rows = np.log(rng.dirichlet(np.ones(Jm), size=(N, K)))
    theta = rng.normal(100.0, 30.0, size=(N, K, Jm))
    var = rng.uniform(10.0, 50.0, size=K)
    joint = rng.integers(0, Jm, size=(M, K)).astype(np.int32)
    out_p = _pure.fbpf_accumulate(rows, theta, var, joint, 250.0)
    out_n = _native.fbpf_accumulate(rows, theta, var, joint, 250.0)
    for a, b in zip(out_p, out_n):
        assert np.allclose(a, b, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.floats(0.0, 0.999), st.integers(0, 10_000))
def test_systematic_counts_match_oracle(n, u_frac, seed):
    rng = np.random.default_rng(seed)
    w = rng.dirichlet(np.ones(n) * 0.7)
    u0 = u_frac / n
    want = offspring_oracle(w, u0)
    for impl in BACKENDS:
        got = np.asarray(impl.systematic_counts(w, u0))
        assert got.sum() == n
        assert np.array_equal(got, want), impl.BACKEND


def test_systematic_counts_are_within_one_of_expectation():
    # offspring of weight w differs from N*w by less than 1 for systematic
    # placement; this is the variance-reduction property worth guarding
    rng = np.random.default_rng(3)
    N = 500
    w = rng.dirichlet(np.ones(N))
    for u_frac in (0.0, 0.31, 0.77):
        counts = np.asarray(_kernels.systematic_counts(w, u_frac / N))
        assert np.all(np.abs(counts - N * w) < 1.0 + 1e-12)
