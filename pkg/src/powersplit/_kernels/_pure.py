"""Pure NumPy reference implementations of the hot kernels.

Same contracts as the compiled versions in ``_native.pyx``; selected when the
extension is unavailable or POWERSPLIT_PURE=1.
"""

from __future__ import annotations

import numpy as np

BACKEND = "pure"


def _logsumexp_rows(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m_safe), axis=axis)) + np.squeeze(m_safe, axis=axis)
    return np.where(np.isfinite(np.squeeze(m, axis=axis)), out, -np.inf)


def hmm_forward(loginit, logtrans, loglik):
    """Log-space forward pass: alphal[t, j] = log p(y[0..t], x_t = j)."""
    T, J = loglik.shape
    alphal = np.empty((T, J))
    alphal[0] = loginit + loglik[0]
    for t in range(1, T):
        alphal[t] = _logsumexp_rows(alphal[t - 1][:, None] + logtrans, axis=0) + loglik[t]
    return alphal


def hmm_backward(logtrans, loglik):
    """Log-space backward pass: betal[t, j] = log p(y[t+1..] | x_t = j)."""
    T, J = loglik.shape
    betal = np.zeros((T, J))
    for t in range(T - 2, -1, -1):
        betal[t] = _logsumexp_rows(logtrans + (betal[t + 1] + loglik[t + 1])[None, :], axis=1)
    return betal


def hsmm_backward(logtrans_bar, logdur, logtail, loglik, dmax):
    """Explicit-duration backward messages.

    B[t, i]     = log p(y[t..] | segment ended after t observations, prev state i)
    Bstar[t, j] = log p(y[t..] | new segment in state j starts at index t)
    with B[T] = 0. ``logdur[j, d-1]`` is log p(D = d), ``logtail[j, m]`` is
    log p(D > m) for m = 0..T, and durations beyond ``dmax`` are rolled into
    the censor term.
    """
    T, J = loglik.shape
    B = np.zeros((T + 1, J))
    Bstar = np.zeros((T, J))
    cum = np.vstack([np.zeros((1, J)), np.cumsum(loglik, axis=0)])  # cum[t] = sum loglik[:t]
    for t in range(T - 1, -1, -1):
        span = min(T - t, dmax)
        # interior durations d = 1..span
        ds = np.arange(1, span + 1)
        seg_lik = cum[t + ds] - cum[t]  # (span, J)
        terms = B[t + ds] + logdur.T[ds - 1] + seg_lik
        # censored continuation past the horizon (or the duration window)
        censor = logtail[:, span] + (cum[T] - cum[t])
        stacked = np.vstack([terms, censor[None, :]])
        Bstar[t] = _logsumexp_rows(stacked, axis=0)
        B[t] = _logsumexp_rows(logtrans_bar + Bstar[t][None, :], axis=1)
    return B, Bstar


def fbpf_accumulate(logtrans_rows, theta_rows, var_chain, joint_idx, ybar):
    """Joint-state enumeration for the factorial filter, one observation.

    logtrans_rows : (N, K, Jmax) per-particle transition log row from its
                    previous state in each chain (padded with -inf)
    theta_rows    : (N, K, Jmax) per-particle emission means
    var_chain     : (K,) per-chain emission variances
    joint_idx     : (M, K) int32 joint-state table
    ybar          : aggregate observation

    Returns (logw, sumtheta): both (N, M); logw includes the aggregate
    Normal likelihood with variance sum(var_chain).
    """
    N, K, _ = logtrans_rows.shape
    M = joint_idx.shape[0]
    n_idx = np.arange(N)[:, None, None]
    k_idx = np.arange(K)[None, None, :]
    j_idx = joint_idx[None, :, :]
    trans = logtrans_rows[n_idx, k_idx, j_idx]  # (N, M, K)
    theta = theta_rows[n_idx, k_idx, j_idx]
    sumtheta = theta.sum(axis=2)
    logw = trans.sum(axis=2)
    svar = float(var_chain.sum())
    logw += -0.5 * (np.log(2.0 * np.pi * svar) + (ybar - sumtheta) ** 2 / svar)
    return logw, sumtheta


def systematic_counts(weights, u0):
    """Systematic-resampling offspring counts from a normalized weight vector.

    u0 is the single uniform on [0, 1/N); positions u0 + i/N fall into the
    cumulative-weight partition.
    """
    N = len(weights)
    positions = u0 + np.arange(N) / N
    cum = np.cumsum(weights)
    cum[-1] = 1.0  # guard the right edge against rounding
    idx = np.searchsorted(cum, positions, side="right")
    return np.bincount(idx, minlength=N)
