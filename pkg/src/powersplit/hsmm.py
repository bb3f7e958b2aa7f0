"""Explicit-duration HSMM: simulation with right-censoring, backward messages,
blocked super-state/duration draws, the generic mixture Gibbs pass, and the
duration-parameter sampler.

Durations follow a two-component mixture: Poisson (probability ``phi``) or
negative binomial with fixed count ``r`` and success parameter ``vphi``. Both
components are conditioned on d >= 1 so the runtime law is a proper pmf on
positive durations; the raw textbook-form densities (including the d = 0
Poisson mass) live in ``distributions.duration_logpmf``. With ``phi = 0`` and
``r = 1`` the law is exactly Geometric(1 - vphi) on {1, 2, ...}, which makes
the model collapse to a plain HMM.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp
from scipy.stats import nbinom, poisson

from . import _kernels
from .distributions import (
    NormalPrior,
    assert_simplex,
    beta_sample,
    categorical_sample,
    categorical_sample_logits,
    conj_update_beta_negbin,
    conj_update_dirichlet,
    conj_update_gamma_poisson,
    conj_update_normal,
    dirichlet_sample,
    gamma_sample,
    normal_logpdf,
)

# ---------------------------------------------------------------------------
# duration model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DurationParams:
    """Poisson/negative-binomial duration mixture for one state."""

    phi: float   # Poisson component weight
    lam: float   # Poisson rate
    r: int       # negative-binomial count (fixed, no prior)
    vphi: float  # negative-binomial success parameter

    def __post_init__(self):
        if not 0 <= self.phi <= 1:
            raise ValueError("phi must lie in [0, 1]")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if not 0 < self.vphi < 1:
            raise ValueError("vphi must lie in (0, 1)")

    # normalizers for conditioning each component on d >= 1
    @property
    def _log_poi_norm(self) -> float:
        # log P(Poisson >= 1)
        return float(np.log(-np.expm1(-self.lam)))

    @property
    def _log_nb_norm(self) -> float:
        # log P(NB >= 1) = log(1 - (1-vphi)^r)
        return float(np.log(-np.expm1(self.r * math.log1p(-self.vphi))))

    def logpmf(self, d) -> np.ndarray:
        """log p(D = d) on the positive integers."""
        d = np.asarray(d)
        out = np.full(d.shape, -np.inf, dtype=float)
        pos = d >= 1
        parts = []
        if self.phi > 0:
            lp = poisson.logpmf(d[pos], self.lam) - self._log_poi_norm
            parts.append(math.log(self.phi) + lp)
        if self.phi < 1:
            ln = nbinom.logpmf(d[pos], self.r, 1.0 - self.vphi) - self._log_nb_norm
            parts.append(math.log1p(-self.phi) + ln)
        out[pos] = logsumexp(np.stack(parts), axis=0) if parts else -np.inf
        return out[()] if out.ndim == 0 else out

    def logtail(self, m) -> np.ndarray:
        """log P(D > m) for m >= 0."""
        m = np.asarray(m)
        with np.errstate(divide="ignore"):
            parts = []
            if self.phi > 0:
                parts.append(
                    math.log(self.phi)
                    + poisson.logsf(m, self.lam)
                    - self._log_poi_norm
                )
            if self.phi < 1:
                parts.append(
                    math.log1p(-self.phi)
                    + nbinom.logsf(m, self.r, 1.0 - self.vphi)
                    - self._log_nb_norm
                )
        out = logsumexp(np.stack(parts), axis=0)
        return out[()] if np.ndim(out) == 0 else out

    def mean(self) -> float:
        m = 0.0
        if self.phi > 0:
            m += self.phi * self.lam / math.exp(self._log_poi_norm)
        if self.phi < 1:
            nb_mean = self.r * self.vphi / (1.0 - self.vphi)
            m += (1.0 - self.phi) * nb_mean / math.exp(self._log_nb_norm)
        return m

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw positive durations (component pick, then rejection of zeros)."""
        use_poi = rng.random(size) < self.phi
        out = np.empty(size, dtype=np.int64)
        for mask, draw in (
            (use_poi, lambda n: rng.poisson(self.lam, n)),
            (~use_poi, lambda n: rng.negative_binomial(self.r, 1.0 - self.vphi, n)),
        ):
            idx = np.flatnonzero(mask)
            vals = draw(len(idx))
            bad = vals < 1
            while bad.any():
                vals[bad] = draw(int(bad.sum()))
                bad = vals < 1
            out[idx] = vals
        return out


@lru_cache(maxsize=512)
def _duration_tables_frozen(durations: tuple, dmax: int):
    ds = np.arange(1, dmax + 1)
    ms = np.arange(0, dmax + 1)
    logdur = np.stack([d.logpmf(ds) for d in durations])
    logtail = np.stack([d.logtail(ms) for d in durations])
    logdur.setflags(write=False)
    logtail.setflags(write=False)
    return logdur, logtail


def duration_tables(durations, dmax: int):
    """Stack per-state logpmf (J, dmax) and logtail (J, dmax+1) tables.

    Memoized on the (hashable) parameter tuples; repeated draws at fixed
    parameters skip the scipy survival/pmf evaluations. Callers get fresh
    copies so the cache entries stay pristine.
    """
    logdur, logtail = _duration_tables_frozen(tuple(durations), int(dmax))
    return logdur.copy(), logtail.copy()


def duration_tail_by_complement(dur: DurationParams, dmax: int) -> np.ndarray:
    """P(D > m) for m = 0..dmax via 1 - compensated cumulative sum.

    Cross-check route for the analytic survival functions in ``logtail``.
    """
    pmf = np.exp(dur.logpmf(np.arange(1, dmax + 1)))
    tails = np.empty(dmax + 1)
    tails[0] = 1.0
    acc = 0.0
    comp = 0.0  # Kahan compensation
    for i, p in enumerate(pmf):
        y = p - comp
        t = acc + y
        comp = (t - acc) - y
        acc = t
        tails[i + 1] = 1.0 - acc
    return tails


# ---------------------------------------------------------------------------
# model types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HsmmParams:
    """Super-state transition rows (zero diagonal), emissions, durations."""

    pi_bar: np.ndarray                 # (J, J), exact zeros on the diagonal
    theta: np.ndarray                  # (J,)
    sigma2: float
    durations: tuple[DurationParams, ...]
    init: np.ndarray | None = None

    def __post_init__(self):
        pi = np.asarray(self.pi_bar, dtype=float)
        theta = np.asarray(self.theta, dtype=float)
        J = pi.shape[0]
        if pi.shape != (J, J):
            raise ValueError("pi_bar must be square")
        if np.any(np.diag(pi) != 0.0):
            raise ValueError("pi_bar diagonal must be exactly zero")
        if J > 1:
            for row in pi:
                assert_simplex(row, atol=1e-9)
        if theta.shape != (J,) or len(self.durations) != J:
            raise ValueError("theta/durations length must match state count")
        if self.sigma2 <= 0:
            raise ValueError("sigma2 must be positive")
        object.__setattr__(self, "pi_bar", pi)
        object.__setattr__(self, "theta", theta)
        init = self.init
        if init is None:
            init = np.full(J, 1.0 / J)
        else:
            init = assert_simplex(np.asarray(init, dtype=float), atol=1e-9)
        object.__setattr__(self, "init", init)

    @property
    def J(self) -> int:
        return self.pi_bar.shape[0]


@dataclass(frozen=True)
class SegmentPath:
    """Super-states z, their durations D, and the horizon T they cover.

    Right-censoring: the final duration may overrun T; the expanded state
    sequence is truncated at T.
    """

    z: np.ndarray
    D: np.ndarray
    T: int

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.int64)
        D = np.asarray(self.D, dtype=np.int64)
        if z.shape != D.shape or z.ndim != 1 or len(z) == 0:
            raise ValueError("z and D must be matching nonempty vectors")
        if np.any(D < 1):
            raise ValueError("durations must be positive")
        if np.any(z[1:] == z[:-1]):
            raise ValueError("super-states may not self-transition")
        total = int(D.sum())
        if not (total - D[-1] < self.T <= total):
            raise ValueError("durations must right-censor the horizon")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "D", D)

    @property
    def x(self) -> np.ndarray:
        """Expanded per-step state sequence of length T."""
        return np.repeat(self.z, self.D)[: self.T]

    @property
    def starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.D)[:-1]])


def simulate_hsmm(params: HsmmParams, T: int, rng: np.random.Generator):
    """Simulate a right-censored segment path and clamped Normal emissions."""
    if T < 1:
        raise ValueError("T must be >= 1")
    z: list[int] = []
    D: list[int] = []
    covered = 0
    while covered < T:
        if not z:
            nxt = categorical_sample(rng, params.init)
        else:
            nxt = categorical_sample(rng, params.pi_bar[z[-1]])
        d = int(params.durations[nxt].sample(rng, 1)[0])
        z.append(nxt)
        D.append(d)
        covered += d
    path = SegmentPath(np.array(z), np.array(D), T)
    y = params.theta[path.x] + np.sqrt(params.sigma2) * rng.standard_normal(T)
    return path, np.maximum(y, 0.0)


def emission_loglik(params: HsmmParams, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return normal_logpdf(y[:, None], params.theta[None, :], params.sigma2)


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def hsmm_backward_messages(params: HsmmParams, y, dmax: int | None = None):
    """(B, Bstar) log-space tables; B has T+1 rows with B[T] = 0.

    ``dmax`` truncates the duration window; longer durations are folded into
    the censor term (exact when dmax >= T).
    """
    y = np.asarray(y, dtype=float)
    T = len(y)
    if T == 0:
        raise ValueError("need at least one observation")
    window = T if dmax is None else min(dmax, T)
    loglik = emission_loglik(params, y)
    logdur, logtail = duration_tables(params.durations, window)
    return _kernels.hsmm_backward(_log(params.pi_bar), logdur, logtail, loglik, window)


def hsmm_loglik(params: HsmmParams, y, dmax: int | None = None) -> float:
    _, Bstar = hsmm_backward_messages(params, y, dmax)
    return float(logsumexp(_log(params.init) + Bstar[0]))


def hsmm_forward_messages(params: HsmmParams, y, dmax: int | None = None):
    """(A, Astar): A[t, j] = log p(y[0..t-1], segment ends after t, state j),
    Astar[t, j] = log p(y[0..t-1], next segment starts at t in state j)."""
    y = np.asarray(y, dtype=float)
    T = len(y)
    window = T if dmax is None else min(dmax, T)
    loglik = emission_loglik(params, y)
    logdur, _ = duration_tables(params.durations, window)
    cum = np.vstack([np.zeros((1, params.J)), np.cumsum(loglik, axis=0)])
    A = np.full((T + 1, params.J), -np.inf)
    Astar = np.full((T + 1, params.J), -np.inf)
    Astar[0] = _log(params.init)
    logpibar = _log(params.pi_bar)
    for t in range(1, T + 1):
        dspan = min(t, window)
        ds = np.arange(1, dspan + 1)
        terms = Astar[t - ds] + logdur.T[ds - 1] + (cum[t] - cum[t - ds])
        A[t] = logsumexp(terms, axis=0)
        Astar[t] = logsumexp(A[t][:, None] + logpibar, axis=0)
    return A, Astar


def hsmm_smoothed_marginals(params: HsmmParams, y, dmax: int | None = None) -> np.ndarray:
    """Exact per-step state occupancy posterior p(x_t = j | y), (T, J).

    Quadratic in T: sums the posterior weight of every candidate segment.
    """
    y = np.asarray(y, dtype=float)
    T = len(y)
    window = T if dmax is None else min(dmax, T)
    loglik = emission_loglik(params, y)
    logdur, logtail = duration_tables(params.durations, window)
    cum = np.vstack([np.zeros((1, params.J)), np.cumsum(loglik, axis=0)])
    B, Bstar = hsmm_backward_messages(params, y, dmax)
    _, Astar = hsmm_forward_messages(params, y, dmax)
    logZ = logsumexp(Astar[0] + Bstar[0])

    occ = np.zeros((T, params.J))
    for a in range(T):
        span = min(T - a, window)
        ds = np.arange(1, span + 1)
        # interior segments [a, a+d): step a+i is covered by every d >= i+1
        w = np.exp(Astar[a] + logdur.T[ds - 1] + (cum[a + ds] - cum[a]) + B[a + ds] - logZ)
        occ[a : a + span] += np.cumsum(w[::-1], axis=0)[::-1]
        # censored final segment starting at a covers a..T-1
        wc = np.exp(Astar[a] + logtail[:, span] + (cum[T] - cum[a]) - logZ)
        occ[a:] += wc
    return occ


@lru_cache(maxsize=4096)
def _tail_scalar(dur: DurationParams, m: int) -> float:
    return math.exp(float(dur.logtail(m)))


@lru_cache(maxsize=4096)
def _pmf_block(dur: DurationParams, start: int, n: int) -> np.ndarray:
    vals = np.exp(dur.logpmf(np.arange(start, start + n)))
    vals.setflags(write=False)
    return vals


def _sample_censored_duration(dur: DurationParams, m: int, rng: np.random.Generator) -> int:
    """Draw from p(D = d | D > m) by inverting the cdf in growing blocks."""
    target = rng.random() * _tail_scalar(dur, m)
    acc = 0.0
    d = m
    n = 32
    while d <= m + 1_000_000:
        cum = acc + np.cumsum(_pmf_block(dur, d + 1, n))
        hit = int(np.searchsorted(cum, target))
        if hit < n:
            return d + 1 + hit
        acc = float(cum[-1])
        d += n
        n = min(2 * n, 4096)
    return d


def blocked_sample_segments(params: HsmmParams, y, rng: np.random.Generator,
                            messages=None, dmax: int | None = None) -> SegmentPath:
    """One exact joint draw of (z, D) given the observations."""
    y = np.asarray(y, dtype=float)
    T = len(y)
    window = T if dmax is None else min(dmax, T)
    if messages is None:
        messages = hsmm_backward_messages(params, y, dmax)
    B, Bstar = messages
    loglik = emission_loglik(params, y)
    logdur, logtail = duration_tables(params.durations, window)
    cum = np.vstack([np.zeros((1, params.J)), np.cumsum(loglik, axis=0)])
    logpibar = _log(params.pi_bar)

    z: list[int] = []
    D: list[int] = []
    t = 0
    while t < T:
        if not z:
            j = categorical_sample_logits(rng, _log(params.init) + Bstar[0])
        else:
            j = categorical_sample_logits(rng, logpibar[z[-1]] + Bstar[t])
        span = min(T - t, window)
        ds = np.arange(1, span + 1)
        dur_logits = B[t + ds, j] + logdur[j, ds - 1] + (cum[t + ds, j] - cum[t, j])
        censor_logit = logtail[j, span] + (cum[T, j] - cum[t, j])
        pick = categorical_sample_logits(rng, np.append(dur_logits, censor_logit))
        if pick < span:
            d = int(ds[pick])
        else:
            # the segment runs past the horizon: draw the actual length from
            # the censored conditional
            d = _sample_censored_duration(params.durations[j], span, rng)
        z.append(j)
        D.append(d)
        t += d
    return SegmentPath(np.array(z), np.array(D), T)


# ---------------------------------------------------------------------------
# generic mixture Gibbs (shared by duration fitting and the tests)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NormalComponent:
    """Normal data with known variance and a Normal mean prior."""

    prior: NormalPrior
    sigma2: float

    def loglik(self, values, param):
        return normal_logpdf(np.asarray(values, dtype=float), param, self.sigma2)

    def sample_posterior(self, values, rng):
        values = np.asarray(values, dtype=float)
        post = conj_update_normal(self.prior, values.sum(), len(values), self.sigma2)
        return rng.normal(post.mean, math.sqrt(post.var))


@dataclass(frozen=True)
class PoissonComponent:
    """Positive-count data: Poisson conditioned on d >= 1, Gamma prior."""

    shape: float
    rate: float

    def loglik(self, values, lam):
        vals = np.asarray(values)
        return poisson.logpmf(vals, lam) - np.log(-np.expm1(-lam))

    def sample_posterior(self, values, rng):
        vals = np.asarray(values)
        a, b = conj_update_gamma_poisson((self.shape, self.rate), vals.sum(), len(vals))
        return gamma_sample(rng, a, b)


@dataclass(frozen=True)
class NegBinComponent:
    """Positive-count data: negative binomial conditioned on d >= 1 with
    fixed count r, Beta prior on the success parameter."""

    a: float
    b: float
    r: int

    def loglik(self, values, vphi):
        vals = np.asarray(values)
        return nbinom.logpmf(vals, self.r, 1.0 - vphi) - np.log(
            -np.expm1(self.r * math.log1p(-vphi))
        )

    def sample_posterior(self, values, rng):
        vals = np.asarray(values)
        a, b = conj_update_beta_negbin((self.a, self.b), vals.sum(), len(vals), self.r)
        return beta_sample(rng, a, b)


def mixture_gibbs(values, weights_alpha, components, sweeps: int,
                  rng: np.random.Generator, init_labels=None):
    """Finite-mixture Gibbs: params given labels, weights given labels,
    labels given everything; returns the final (weights, params, labels).

    Empty components are refreshed from their priors (posterior with no data).
    """
    M = len(components)
    if M == 0:
        raise ValueError("need at least one component")
    values = np.asarray(values)
    n = len(values)
    weights_alpha = np.asarray(weights_alpha, dtype=float)
    if weights_alpha.shape != (M,):
        raise ValueError("weights_alpha length must match component count")
    labels = (np.zeros(n, dtype=np.int64) if init_labels is None
              else np.asarray(init_labels, dtype=np.int64).copy())
    if init_labels is None and n:
        labels = rng.integers(0, M, size=n)

    weights = np.full(M, 1.0 / M)
    params = [None] * M
    for _ in range(sweeps):
        for m in range(M):
            params[m] = components[m].sample_posterior(values[labels == m], rng)
        counts = np.bincount(labels, minlength=M)
        weights = dirichlet_sample(rng, conj_update_dirichlet(weights_alpha, counts))
        if n:
            logits = np.stack(
                [np.log(weights[m]) + components[m].loglik(values, params[m])
                 for m in range(M)],
                axis=1,
            )
            m0 = logits.max(axis=1, keepdims=True)
            p = np.exp(logits - m0)
            p /= p.sum(axis=1, keepdims=True)
            u = rng.random(n)
            labels = np.minimum((u[:, None] > np.cumsum(p, axis=1)).sum(axis=1), M - 1)
    return weights, params, labels


# ---------------------------------------------------------------------------
# duration-parameter and full-sweep samplers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DurationHyper:
    """Hyperparameters for one state's duration mixture."""

    a_phi: float = 1.0    # Beta for the Poisson-vs-negbin weight
    b_phi: float = 1.0
    a_lam: float = 2.0    # Gamma (shape, rate) for the Poisson rate
    b_lam: float = 0.1
    a_vphi: float = 1.0   # Beta for the negbin success parameter
    b_vphi: float = 1.0
    r: int = 2            # fixed negbin count

    def __post_init__(self):
        for v in (self.a_phi, self.b_phi, self.a_lam, self.b_lam, self.a_vphi, self.b_vphi):
            if v <= 0:
                raise ValueError("hyperparameters must be positive")
        if self.r < 1:
            raise ValueError("r must be >= 1")

    def sample_prior(self, rng: np.random.Generator) -> DurationParams:
        return DurationParams(
            phi=beta_sample(rng, self.a_phi, self.b_phi),
            lam=gamma_sample(rng, self.a_lam, self.b_lam),
            r=self.r,
            vphi=beta_sample(rng, self.a_vphi, self.b_vphi),
        )

    def log_prior(self, p: DurationParams) -> float:
        """Log prior density of a parameter triple (r must match)."""
        from scipy.stats import beta as beta_dist, gamma as gamma_dist

        if p.r != self.r:
            return -np.inf
        return float(
            beta_dist.logpdf(p.phi, self.a_phi, self.b_phi)
            + gamma_dist.logpdf(p.lam, self.a_lam, scale=1.0 / self.b_lam)
            + beta_dist.logpdf(p.vphi, self.a_vphi, self.b_vphi)
        )


def sample_duration_params(durations, hyper: DurationHyper, current: DurationParams,
                           rng: np.random.Generator) -> DurationParams:
    """One mixture-Gibbs pass for one state's duration parameters.

    Labels the observed segment lengths Poisson-vs-negbin under the current
    parameters, then draws the conjugate updates; with no segments this is a
    fresh prior draw.
    """
    ds = np.asarray(durations, dtype=np.int64)
    if len(ds) == 0:
        return hyper.sample_prior(rng)
    lp1 = (math.log(current.phi) if current.phi > 0 else -np.inf) + \
        poisson.logpmf(ds, current.lam) - current._log_poi_norm
    lp2 = (math.log1p(-current.phi) if current.phi < 1 else -np.inf) + \
        nbinom.logpmf(ds, current.r, 1.0 - current.vphi) - current._log_nb_norm
    m0 = np.maximum(lp1, lp2)
    p1 = np.exp(lp1 - m0)
    p1 = p1 / (p1 + np.exp(lp2 - m0))
    is_poi = rng.random(len(ds)) < p1

    n1, n2 = int(is_poi.sum()), int((~is_poi).sum())
    s1, s2 = int(ds[is_poi].sum()), int(ds[~is_poi].sum())
    a, b = conj_update_gamma_poisson((hyper.a_lam, hyper.b_lam), s1, n1)
    lam = gamma_sample(rng, a, b)
    a, b = conj_update_beta_negbin((hyper.a_vphi, hyper.b_vphi), s2, n2, hyper.r)
    vphi = beta_sample(rng, a, b)
    phi = beta_sample(rng, hyper.a_phi + n1, hyper.b_phi + n2)
    return DurationParams(phi=phi, lam=lam, r=hyper.r, vphi=vphi)


@dataclass(frozen=True)
class HsmmPriors:
    alpha: np.ndarray                      # (J,) Dirichlet for transition rows
    emission: tuple[NormalPrior, ...]      # length J
    duration: tuple[DurationHyper, ...]    # length J


@dataclass(frozen=True)
class HsmmState:
    params: HsmmParams
    path: SegmentPath


def sample_pi_bar_row(alpha, counts_row, j, rng) -> np.ndarray:
    """Dirichlet draw over the off-diagonal entries of row j."""
    J = len(alpha)
    keep = np.arange(J) != j
    row = np.zeros(J)
    row[keep] = dirichlet_sample(rng, conj_update_dirichlet(alpha[keep], counts_row[keep]))
    return row


def gibbs_sweep_hsmm(state: HsmmState, y, priors: HsmmPriors,
                     rng: np.random.Generator, dmax: int | None = None) -> HsmmState:
    """One sweep: blocked segments, emission means, transition rows (zero
    diagonal preserved), then per-state duration parameters."""
    params = state.params
    y = np.asarray(y, dtype=float)
    J = params.J
    path = blocked_sample_segments(params, y, rng, dmax=dmax)
    x = path.x

    theta = np.empty(J)
    for j in range(J):
        sel = y[x == j]
        post = conj_update_normal(priors.emission[j], sel.sum(), len(sel), params.sigma2)
        theta[j] = rng.normal(post.mean, math.sqrt(post.var))

    counts = np.zeros((J, J))
    np.add.at(counts, (path.z[:-1], path.z[1:]), 1.0)
    pi_bar = np.vstack([sample_pi_bar_row(np.asarray(priors.alpha, dtype=float), counts[j], j, rng)
                        for j in range(J)])

    durations = tuple(
        sample_duration_params(path.D[path.z == j], priors.duration[j],
                               params.durations[j], rng)
        for j in range(J)
    )

    new_params = replace(params, pi_bar=pi_bar, theta=theta, durations=durations)
    return HsmmState(params=new_params, path=path)
