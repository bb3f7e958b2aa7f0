"""Finite-state Bayesian HMM: simulation, exact log-space message passing,
blocked posterior draws of the state path, and the full Gibbs sweep.

Emissions are Normal with per-state means and a shared, fixed variance.
Simulated powers are clamped at zero; inference still uses the unclamped
Normal density (the clamp is a data-recording convention, not a model change).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .distributions import (
    NormalPrior,
    assert_simplex,
    categorical_sample,
    conj_update_dirichlet,
    conj_update_normal,
    dirichlet_sample,
    normal_logpdf,
)


@dataclass(frozen=True)
class HmmParams:
    """Transition matrix, emission means, shared emission variance, and the
    initial state distribution (uniform unless configured otherwise)."""

    pi: np.ndarray       # (J, J) rows on the simplex
    theta: np.ndarray    # (J,) emission means
    sigma2: float        # shared emission variance
    init: np.ndarray | None = None  # (J,) initial distribution

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        if pi.ndim != 2 or pi.shape[0] != pi.shape[1]:
            raise ValueError("pi must be a square matrix")
        if theta.shape != (pi.shape[0],):
            raise ValueError("theta length must match the state count")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        for row in pi:
            assert_simplex(row, atol=1e-9)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "theta", theta)
        init = self.init
        if init is None:
            init = np.full(pi.shape[0], 1.0 / pi.shape[0])
        else:
            init = assert_simplex(np.asarray(init, dtype=float), atol=1e-9)
        object.__setattr__(self, "init", init)

    @property
    def J(self) -> int:
        return self.pi.shape[0]


@dataclass(frozen=True)
class HmmPriors:
    """Conjugate hyperparameters for one chain: a Dirichlet concentration
    vector shared by every transition row and a Normal prior per state."""

    alpha: np.ndarray                 # (J,)
    emission: tuple[NormalPrior, ...]  # length J

    @property
    def J(self) -> int:
        return len(self.emission)


def simulate_hmm(params: HmmParams, T: int, rng: np.random.Generator):
    """Simulate (x, y) of length T; negative powers are recorded as 0."""
    if T < 1:
        raise ValueError("T must be >= 1")
    J = params.J
    x = np.empty(T, dtype=np.int64)
    x[0] = categorical_sample(rng, params.init)
    for t in range(1, T):
        x[t] = categorical_sample(rng, params.pi[x[t - 1]])
    y = params.theta[x] + np.sqrt(params.sigma2) * rng.standard_normal(T)
    return x, np.maximum(y, 0.0)


def emission_loglik(params: HmmParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return normal_logpdf(y[:, None], params.theta[None, :], params.sigma2)


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def forward_messages(params: HmmParams, y) -> np.ndarray:
    """alphal[t, j] = log p(y[0..t], x_t = j)."""
    loglik = emission_loglik(params, y)
    if loglik.shape[0] == 0:
        raise ValueError("need at least one observation")
    return _kernels.hmm_forward(_log(params.init), _log(params.pi), loglik)


def backward_messages(params: HmmParams, y) -> np.ndarray:
    """betal[t, j] = log p(y[t+1..] | x_t = j); last row is zero."""
    loglik = emission_loglik(params, y)
    if loglik.shape[0] == 0:
        raise ValueError("need at least one observation")
    return _kernels.hmm_backward(_log(params.pi), loglik)


def loglik(params: HmmParams, y) -> float:
    return float(logsumexp(forward_messages(params, y)[-1]))


def smoothing_marginals(alphal: np.ndarray, betal: np.ndarray) -> np.ndarray:
    """p(x_t | y) rows, from the forward and backward messages."""
    joint = alphal + betal
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def filtering_marginals(alphal: np.ndarray) -> np.ndarray:
    """p(x_t | y[0..t]) rows."""
    return np.exp(alphal - logsumexp(alphal, axis=1, keepdims=True))


def blocked_sample_states(params: HmmParams, y, rng: np.random.Generator,
                          betal: np.ndarray | None = None) -> np.ndarray:
    """One exact joint posterior draw of the state path (forward draw
    against the backward messages)."""
    y = np.asarray(y, dtype=float)
    if betal is None:
        betal = backward_messages(params, y)
    loglik_t = emission_loglik(params, y)
    logpi = _log(params.pi)
    T = len(y)
    x = np.empty(T, dtype=np.int64)
    logits = _log(params.init) + loglik_t[0] + betal[0]
    x[0] = _sample_logits(rng, logits)
    for t in range(1, T):
        logits = logpi[x[t - 1]] + loglik_t[t] + betal[t]
        x[t] = _sample_logits(rng, logits)
    return x


def _sample_logits(rng, logits):
    m = logits.max()
    p = np.exp(logits - m)
    return categorical_sample(rng, p / p.sum())


def transition_counts(x, J: int) -> np.ndarray:
    """Counts n[i, j] of observed i -> j steps along the path."""
    x = np.asarray(x)
    n = np.zeros((J, J))
    np.add.at(n, (x[:-1], x[1:]), 1.0)
    return n


@dataclass(frozen=True)
class HmmState:
    params: HmmParams
    x: np.ndarray


def gibbs_sweep_hmm(state: HmmState, y, priors: HmmPriors,
                    rng: np.random.Generator) -> HmmState:
    """One sweep: blocked path draw, then emission means, then transition rows.

    States with no assigned observations get a fresh prior draw.
    """
    params = state.params
    y = np.asarray(y, dtype=float)
    x = blocked_sample_states(params, y, rng)
    J = params.J

    theta = np.empty(J)
    for j in range(J):
        sel = y[x == j]
        post = conj_update_normal(priors.emission[j], sel.sum(), len(sel), params.sigma2)
        theta[j] = rng.normal(post.mean, np.sqrt(post.var))

    counts = transition_counts(x, J)
    pi = np.empty((J, J))
    for j in range(J):
        pi[j] = dirichlet_sample(rng, conj_update_dirichlet(priors.alpha, counts[j]))

    return HmmState(params=replace(params, pi=pi, theta=theta), x=x)
