"""Probability primitives: simplex checks, conjugate updates, log densities,
stick breaking, and the elementary samplers everything else builds on.

All density evaluation is in log space. Degenerate Dirichlet coordinates
(zero concentration) produce exactly-zero weights rather than NaNs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

SIMPLEX_ATOL = 1e-12


def assert_simplex(w, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate that ``w`` is a probability vector; returns it as an ndarray."""
    w = np.asarray(w, dtype=float)
    if w.ndim != 1:
        raise ValueError("simplex vector must be 1-d")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("simplex entries must lie in [0, 1]")
    if abs(w.sum() - 1.0) > atol:
        raise ValueError(f"simplex entries sum to {w.sum()!r}, not 1")
    return w


@dataclass(frozen=True, slots=True)
class NormalPrior:
    """Conjugate prior for a Normal mean with known observation variance."""

    mean: float
    var: float

    def __post_init__(self):
        if self.var <= 0:
            raise ValueError("prior variance must be positive")


def dirichlet_mean(alpha) -> np.ndarray:
    """Mean of a Dirichlet: alpha_k / sum(alpha). Zero coordinates stay zero."""
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size < 2:
        raise ValueError("need at least 2 concentration entries")
    if np.any(alpha < 0):
        raise ValueError("concentrations must be nonnegative")
    total = alpha.sum()
    if total <= 0:
        raise ValueError("all-zero concentration vector")
    return alpha / total


def conj_update_normal(prior: NormalPrior, obs_sum: float, obs_count: int, sigma2: float) -> NormalPrior:
    """Posterior for a Normal mean given iid observations with variance sigma2.

    obs_count = 0 returns the prior unchanged.
    """
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if obs_count < 0:
        raise ValueError("obs_count must be nonnegative")
    if obs_count == 0:
        return prior
    prec = 1.0 / prior.var + obs_count / sigma2
    var = 1.0 / prec
    mean = var * (prior.mean / prior.var + obs_sum / sigma2)
    return NormalPrior(mean=mean, var=var)


def conj_update_dirichlet(alpha, counts) -> np.ndarray:
    """Dirichlet-categorical update: elementwise alpha + counts."""
    alpha = np.asarray(alpha, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if alpha.shape != counts.shape:
        raise ValueError("alpha and counts must have the same shape")
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    return alpha + counts


def conj_update_gamma_poisson(hyper, data_sum, data_n):
    """Gamma shape/rate update for a Poisson mean: (a + sum, b + n)."""
    a, b = hyper
    if a <= 0 or b <= 0:
        raise ValueError("gamma hyperparameters must be positive")
    return (a + data_sum, b + data_n)


def conj_update_beta_negbin(hyper, data_sum, data_n, r):
    """Beta update for the negative-binomial duration parameter:
    (a + sum, b + r * n)."""
    a, b = hyper
    if a <= 0 or b <= 0:
        raise ValueError("beta hyperparameters must be positive")
    if r < 1:
        raise ValueError("r must be >= 1")
    return (a + data_sum, b + r * data_n)


def stick_breaking(gamma: float, rng: np.random.Generator, epsilon: float = 1e-6) -> np.ndarray:
    """Stick-breaking weights truncated once residual mass < epsilon.

    The residual is folded into the final atom so the result is a proper pmf.
    """
    if gamma <= 0:
        raise ValueError("concentration must be positive")
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    weights = []
    remaining = 1.0
    while remaining >= epsilon:
        frac = rng.beta(1.0, gamma)
        weights.append(remaining * frac)
        remaining *= 1.0 - frac
    weights.append(remaining)
    return np.asarray(weights)


def crp_predictive(table_counts, gamma: float) -> np.ndarray:
    """Seating law over (existing tables..., new table)."""
    if gamma <= 0:
        raise ValueError("concentration must be positive")
    counts = np.asarray(table_counts, dtype=float)
    total = counts.sum() + gamma
    return np.concatenate([counts, [gamma]]) / total


# ---------------------------------------------------------------------------
# log densities
# ---------------------------------------------------------------------------

LOG2PI = math.log(2.0 * math.pi)


def normal_logpdf(y, mean, var):
    y = np.asarray(y, dtype=float)
    if np.any(np.asarray(var) <= 0):
        raise ValueError("variance must be positive")
    return -0.5 * (LOG2PI + np.log(var) + (y - mean) ** 2 / var)


def poisson_logpmf(d, lam):
    d = np.asarray(d)
    if np.any(lam <= 0):
        raise ValueError("rate must be positive")
    if np.any(d < 0):
        raise ValueError("count must be nonnegative")
    return d * np.log(lam) - lam - gammaln(d + 1)


def negbin_logpmf(d, r, vphi, form: str = "shifted"):
    """Negative-binomial duration pmf.

    form="shifted": C(d+r-1, r-1) vphi^(d-1) (1-vphi)^r on d >= 1 (the duration
    model's convention; does not normalize for r >= 2).
    form="standard": C(d+r-1, d) vphi^d (1-vphi)^r on d >= 0.
    """
    d = np.asarray(d)
    if np.any((vphi <= 0) | (vphi >= 1)):
        raise ValueError("vphi must lie in (0, 1)")
    if r < 1:
        raise ValueError("r must be >= 1")
    log_binom = gammaln(d + r) - gammaln(r) - gammaln(d + 1)
    if form == "shifted":
        out = np.where(
            d >= 1,
            log_binom + (d - 1) * np.log(vphi) + r * np.log1p(-vphi),
            -np.inf,
        )
    elif form == "standard":
        out = np.where(
            d >= 0,
            log_binom + d * np.log(vphi) + r * np.log1p(-vphi),
            -np.inf,
        )
    else:
        raise ValueError(f"unknown negbin form {form!r}")
    return out[()] if out.ndim == 0 else out


def duration_logpmf(d, phi, lam, r, vphi, form: str = "shifted"):
    """Two-component duration mixture: phi * Poisson + (1-phi) * NegBin.

    Evaluated exactly as the model writes it (no support renormalization);
    the Poisson component covers d = 0, the shifted-form NegBin starts at 1.
    """
    if not 0 <= phi <= 1:
        raise ValueError("phi must lie in [0, 1]")
    parts = []
    weights = []
    if phi > 0:
        parts.append(poisson_logpmf(d, lam))
        weights.append(math.log(phi))
    if phi < 1:
        parts.append(negbin_logpmf(d, r, vphi, form=form))
        weights.append(math.log1p(-phi))
    stacked = np.stack([p + w for p, w in zip(parts, weights)])
    return logsumexp(stacked, axis=0)


def mixture_logpdf(component_logpdfs, weights):
    """log sum_m w_m exp(logpdf_m); component_logpdfs stacked on axis 0."""
    weights = np.asarray(weights, dtype=float)
    logw = np.full(weights.shape, -np.inf)
    pos = weights > 0
    logw[pos] = np.log(weights[pos])
    arr = np.asarray(component_logpdfs, dtype=float)
    return logsumexp(arr + logw.reshape((-1,) + (1,) * (arr.ndim - 1)), axis=0)


def normal_marglik_log(prior: NormalPrior, obs_sum, obs_sumsq, obs_count, sigma2):
    """Log marginal likelihood of iid Normal data with a Normal mean prior."""
    if obs_count == 0:
        return 0.0
    a = 1.0 / prior.var + obs_count / sigma2
    b = prior.mean / prior.var + obs_sum / sigma2
    quad = obs_sumsq / sigma2 + prior.mean**2 / prior.var - b * b / a
    return -0.5 * (obs_count * (LOG2PI + math.log(sigma2)) + math.log(prior.var) + math.log(a) + quad)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def geometric_sample(rng: np.random.Generator, p: float, size=None):
    """Geometric on {0, 1, 2, ...} (number of failures before success)."""
    if not 0 < p <= 1:
        raise ValueError("success probability must lie in (0, 1]")
    return rng.geometric(p, size=size) - 1


def beta_sample(rng: np.random.Generator, a, b, size=None):
    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError("beta parameters must be positive")
    return rng.beta(a, b, size=size)


def gamma_sample(rng: np.random.Generator, shape, rate, size=None):
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise ValueError("gamma parameters must be positive")
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float), size=size)


def dirichlet_sample(rng: np.random.Generator, alpha) -> np.ndarray:
    """Dirichlet draw that tolerates zero concentrations (exact zeros out).

    Works on a single vector or a batch of rows (last axis is the simplex).
    """
    alpha = np.asarray(alpha, dtype=float)
    if np.any(alpha < 0):
        raise ValueError("concentrations must be nonnegative")
    g = rng.standard_gamma(alpha)
    total = g.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("at least one concentration must be positive per row")
    return g / total


def categorical_sample(rng: np.random.Generator, probs) -> int:
    """Single categorical draw from a normalized probability vector."""
    u = rng.random()
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def categorical_sample_logits(rng: np.random.Generator, logits) -> int:
    logits = np.asarray(logits, dtype=float)
    m = logits.max()
    if m == -np.inf:
        raise ValueError("all categories have zero probability")
    p = np.exp(logits - m)
    return categorical_sample(rng, p / p.sum())


def categorical_rows_sample(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """Vectorized categorical draw per row of ``probs`` (rows normalized)."""
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    # right-edge guard: cdf may fall a hair short of 1
    return np.minimum((u[:, None] > cdf).sum(axis=1), probs.shape[1] - 1)


__all__ = [
    "NormalPrior",
    "assert_simplex",
    "dirichlet_mean",
    "conj_update_normal",
    "conj_update_dirichlet",
    "conj_update_gamma_poisson",
    "conj_update_beta_negbin",
    "stick_breaking",
    "crp_predictive",
    "normal_logpdf",
    "poisson_logpmf",
    "negbin_logpmf",
    "duration_logpmf",
    "mixture_logpdf",
    "normal_marglik_log",
    "geometric_sample",
    "beta_sample",
    "gamma_sample",
    "dirichlet_sample",
    "categorical_sample",
    "categorical_sample_logits",
    "categorical_rows_sample",
]
