"""Closed-form conjugate updates for frequency and severity parameters.

Each pair has a batch update, a one-observation step (folding steps over a
sequence reproduces the batch result), and a credibility decomposition of
the posterior mean into a data estimate and a prior estimate.

Truncation bounds on a prior are carried onto its posterior unchanged: the
posterior of a truncated prior is the truncated untruncated-posterior.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .distributions import (
    GammaParams,
    NormalInvChiSqParams,
    NormalParams,
    MIN_TRUNCATED_MASS,
    _gamma_interval_mass,
    _normal_interval_mass,
    gamma_cdf,
    truncated_gamma_mean,
)
from .errors import InfiniteMeanWarning, ValidationError

# Pr[xi <= 1] above which an untruncated tail-index posterior is flagged
INFINITE_MEAN_THRESHOLD = 0.01


@dataclass(frozen=True)
class CredibilityDecomposition:
    """combined = weight * data_estimate + (1 - weight) * prior_estimate."""

    weight: float
    data_estimate: float
    prior_estimate: float
    combined: float


def _credibility(w, data, prior):
    return CredibilityDecomposition(w, data, prior, w * data + (1.0 - w) * prior)


def _as_float_array(values, name):
    arr = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} must be finite")
    return arr


def _check_counts(counts):
    arr = np.asarray(counts, dtype=float).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValidationError("counts must be finite")
    if np.any(arr < 0):
        raise ValidationError("counts must be non-negative")
    if np.any(arr != np.floor(arr)):
        raise ValidationError("counts must be integers")
    return arr


# -- Poisson-Gamma -----------------------------------------------------------

@dataclass(frozen=True)
class PoissonGammaPosterior:
    """Gamma posterior for a Poisson rate after ``n_obs`` annual counts."""

    params: GammaParams
    n_obs: int = 0
    prior: Optional[GammaParams] = None

    @property
    def mean(self):
        return self.params.mean

    @property
    def total_count(self):
        if self.prior is None:
            raise ValidationError("prior not recorded")
        return self.params.alpha - self.prior.alpha

    def credibility(self):
        if self.prior is None:
            raise ValidationError("credibility needs the prior")
        if self.n_obs < 1:
            raise ValidationError("credibility needs at least one observation")
        b = self.prior.beta
        w = self.n_obs / (self.n_obs + 1.0 / b)
        return _credibility(w, self.total_count / self.n_obs, self.prior.alpha * b)


def poisson_gamma_update(prior: GammaParams, counts: Sequence[int]) -> PoissonGammaPosterior:
    """alpha -> alpha + sum N, beta -> beta / (1 + beta n)."""
    arr = _check_counts(counts)
    n = arr.size
    post = replace(prior, alpha=prior.alpha + float(arr.sum()),
                   beta=prior.beta / (1.0 + prior.beta * n))
    return PoissonGammaPosterior(post, n, prior)


def poisson_gamma_step(post: PoissonGammaPosterior, n_k: int) -> PoissonGammaPosterior:
    """One more year: alpha_k = alpha_{k-1} + N_k, beta_k = beta_{k-1} / (1 + beta_{k-1})."""
    _check_counts([n_k])
    p = post.params
    new = replace(p, alpha=p.alpha + float(n_k), beta=p.beta / (1.0 + p.beta))
    prior = post.prior if post.prior is not None else (p if post.n_obs == 0 else None)
    return PoissonGammaPosterior(new, post.n_obs + 1, prior)


def poisson_gamma_credibility(prior: GammaParams, counts: Sequence[int]) -> CredibilityDecomposition:
    """w = n / (n + 1/beta), data estimate mean(N), prior estimate alpha beta."""
    arr = _check_counts(counts)
    if arr.size == 0:
        raise ValidationError("credibility needs at least one count")
    n = arr.size
    w = n / (n + 1.0 / prior.beta)
    return _credibility(w, float(arr.mean()), prior.alpha * prior.beta)


def poisson_gamma_trajectory(prior: GammaParams, counts: Sequence[int]):
    """Posteriors after each year, by repeated single steps."""
    post = PoissonGammaPosterior(prior, 0, prior)
    out = []
    for c in counts:
        post = poisson_gamma_step(post, c)
        out.append(post)
    return out


# -- LogNormal-Normal, known sigma -------------------------------------------

@dataclass(frozen=True)
class NormalMuPosterior:
    """Normal posterior for the log-scale location mu with known sigma."""

    params: NormalParams
    known_sigma: float
    n_obs: int = 0
    prior: Optional[NormalParams] = None

    def __post_init__(self):
        if not (math.isfinite(self.known_sigma) and self.known_sigma > 0):
            raise ValidationError("known_sigma must be positive")

    @property
    def mean(self):
        return self.params.mean

    @property
    def variance(self):
        return self.params.sigma ** 2


def lognormal_mu_update(prior: NormalParams, known_sigma: float, log_losses) -> NormalMuPosterior:
    """mu0 -> (mu0 + omega sum Y) / (1 + n omega), sigma0^2 -> sigma0^2 / (1 + n omega)."""
    y = _as_float_array(log_losses, "log_losses")
    if not (math.isfinite(known_sigma) and known_sigma > 0):
        raise ValidationError("known_sigma must be positive")
    n = y.size
    omega = prior.sigma ** 2 / known_sigma ** 2
    mu = (prior.mu + omega * float(y.sum())) / (1.0 + n * omega)
    s2 = prior.sigma ** 2 / (1.0 + n * omega)
    return NormalMuPosterior(replace(prior, mu=mu, sigma=math.sqrt(s2)), known_sigma, n, prior)


def lognormal_mu_step(post: NormalMuPosterior, y_k: float) -> NormalMuPosterior:
    """One observation with r = sigma0_{k-1}^2 / sigma^2:
    mu_k = (mu_{k-1} + r y_k) / (1 + r), sigma0_k^2 = sigma0_{k-1}^2 / (1 + r)."""
    if not math.isfinite(y_k):
        raise ValidationError("y_k must be finite")
    p = post.params
    s2 = p.sigma ** 2
    r = s2 / post.known_sigma ** 2
    new = replace(p, mu=(p.mu + r * y_k) / (1.0 + r), sigma=math.sqrt(s2 / (1.0 + r)))
    prior = post.prior if post.prior is not None else (p if post.n_obs == 0 else None)
    return NormalMuPosterior(new, post.known_sigma, post.n_obs + 1, prior)


def lognormal_mu_credibility(prior: NormalParams, known_sigma: float, log_losses) -> CredibilityDecomposition:
    """w = n / (n + sigma^2 / sigma0^2), data estimate mean(Y), prior estimate mu0."""
    y = _as_float_array(log_losses, "log_losses")
    if y.size == 0:
        raise ValidationError("credibility needs at least one observation")
    n = y.size
    w = n / (n + known_sigma ** 2 / prior.sigma ** 2)
    return _credibility(w, float(y.mean()), prior.mu)


# -- LogNormal with Normal-Inverse-chi^2 joint prior -------------------------

def lognormal_joint_update(prior: NormalInvChiSqParams, log_losses) -> NormalInvChiSqParams:
    """nu + n, phi + n, theta -> (phi theta + n Ybar) / (phi + n), and
    beta -> beta + phi theta^2 + n mean(Y^2) - (phi theta + n Ybar)^2 / (phi + n).

    The scale update is evaluated in the algebraically equal form
    beta + sum (Y - Ybar)^2 + phi n / (phi + n) (Ybar - theta)^2, which has no
    cancellation and so keeps batch and chained updates in agreement.
    """
    y = _as_float_array(log_losses, "log_losses")
    n = y.size
    if n == 0:
        return prior
    ybar = float(y.mean())
    ss = float(np.sum((y - ybar) ** 2))
    phi, theta = prior.phi, prior.theta
    return NormalInvChiSqParams(
        nu=prior.nu + n,
        beta=prior.beta + ss + phi * n / (phi + n) * (ybar - theta) ** 2,
        theta=(phi * theta + n * ybar) / (phi + n),
        phi=phi + n,
    )


def lognormal_joint_step(post: NormalInvChiSqParams, y_k: float) -> NormalInvChiSqParams:
    if not math.isfinite(y_k):
        raise ValidationError("y_k must be finite")
    phi, theta = post.phi, post.theta
    d = y_k - theta
    return NormalInvChiSqParams(
        nu=post.nu + 1.0,
        beta=post.beta + phi / (phi + 1.0) * d * d,
        theta=(phi * theta + y_k) / (phi + 1.0),
        phi=phi + 1.0,
    )


# -- Pareto-Gamma ------------------------------------------------------------

@dataclass(frozen=True)
class ParetoXiPosterior:
    """Gamma posterior (possibly truncated) for a Pareto tail index."""

    params: GammaParams
    threshold: float
    n_obs: int = 0
    prior: Optional[GammaParams] = None

    def __post_init__(self):
        if not (math.isfinite(self.threshold) and self.threshold > 0):
            raise ValidationError("threshold must be positive")

    @property
    def log_excess_sum(self):
        """sum ln(X_i / L) recovered from the change in 1/beta."""
        if self.prior is None:
            raise ValidationError("prior not recorded")
        return 1.0 / self.params.beta - 1.0 / self.prior.beta

    @property
    def mean(self):
        return truncated_posterior_mean(self)

    def prob_xi_le_one(self):
        return prob_xi_le_one(self.params)

    def credibility(self):
        """w xi_mle + (1 - w) xi0 with w = S / (S + 1/beta), S = sum ln(X/L).

        Decomposes the untruncated posterior mean alpha_hat beta_hat. When
        every loss sits exactly at L (S = 0) the data estimate is infinite and
        ``combined`` is reported as the posterior mean.
        """
        if self.prior is None:
            raise ValidationError("credibility needs the prior")
        if self.n_obs < 1:
            raise ValidationError("credibility needs at least one observation")
        s = self.log_excess_sum
        b = self.prior.beta
        w = s / (s + 1.0 / b)
        xi0 = self.prior.alpha * b
        if s <= 0.0:
            return CredibilityDecomposition(0.0, math.inf, xi0, self.params.alpha * self.params.beta)
        return _credibility(w, self.n_obs / s, xi0)


def prob_xi_le_one(params: GammaParams):
    """Pr[xi <= 1], conditional on the truncation interval."""
    return float(gamma_cdf(1.0, params))


def _check_losses(x, threshold):
    if not (math.isfinite(threshold) and threshold > 0):
        raise ValidationError("threshold L must be positive")
    arr = _as_float_array(x, "losses")
    below = arr < threshold
    if np.any(below):
        raise ValidationError(
            f"{int(below.sum())} loss(es) below threshold {threshold}; "
            "filter them before updating")
    return arr


def _flag_infinite_mean(params, threshold=None):
    limit = INFINITE_MEAN_THRESHOLD if threshold is None else threshold
    if limit is None:
        return
    p = prob_xi_le_one(params)
    if p > limit:
        warnings.warn(
            f"Pr[xi <= 1] = {p:.3g}: predictive severity mean is infinite; "
            "truncate the tail-index prior below at B > 1 to exclude it",
            InfiniteMeanWarning, stacklevel=3)


def pareto_xi_update(prior: GammaParams, threshold: float, losses,
                     infinite_mean_threshold: Optional[float] = None) -> ParetoXiPosterior:
    """alpha -> alpha + n, 1/beta -> 1/beta + sum ln(X_i / L)."""
    x = _check_losses(losses, threshold)
    n = x.size
    s = float(np.sum(np.log(x / threshold)))
    post = replace(prior, alpha=prior.alpha + n, beta=1.0 / (1.0 / prior.beta + s))
    _flag_infinite_mean(post, infinite_mean_threshold)
    return ParetoXiPosterior(post, threshold, n, prior)


def pareto_xi_step(post: ParetoXiPosterior, x_k: float) -> ParetoXiPosterior:
    """alpha_k = alpha_{k-1} + 1, 1/beta_k = 1/beta_{k-1} + ln(x_k / L)."""
    _check_losses([x_k], post.threshold)
    p = post.params
    new = replace(p, alpha=p.alpha + 1.0, beta=1.0 / (1.0 / p.beta + math.log(x_k / post.threshold)))
    prior = post.prior if post.prior is not None else (p if post.n_obs == 0 else None)
    return ParetoXiPosterior(new, post.threshold, post.n_obs + 1, prior)


def pareto_xi_mle(threshold: float, losses):
    """[n^-1 sum ln(X_i / L)]^-1; infinite when every loss equals L."""
    x = _check_losses(losses, threshold)
    if x.size == 0:
        raise ValidationError("need at least one loss")
    s = float(np.sum(np.log(x / threshold)))
    return math.inf if s == 0.0 else x.size / s


def pareto_xi_credibility(prior: GammaParams, threshold: float, losses) -> CredibilityDecomposition:
    post = pareto_xi_update(prior, threshold, losses, infinite_mean_threshold=math.inf)
    return post.credibility()


# -- truncation --------------------------------------------------------------

class Truncation(NamedTuple):
    params: object
    mass: float


def truncate(params, a: float = -math.inf, b: float = math.inf) -> Truncation:
    """Restrict ``params`` to [a, b] (intersected with any existing bounds).

    Returns the truncated parameters and the untruncated probability of the
    resulting interval.
    """
    if not (a < b):
        raise ValidationError(f"need a < b, got [{a}, {b}]")
    if isinstance(params, GammaParams):
        lo0, hi0 = params.bounds
        lo, hi = max(lo0, a, 0.0), min(hi0, b)
        if not lo < hi:
            raise ValidationError("empty truncation interval")
        mass = _gamma_interval_mass(params.alpha, params.beta, lo, hi)
        if not mass > 0.0:
            raise ValidationError(f"zero prior mass on [{lo}, {hi}]")
        out = GammaParams(params.alpha, params.beta,
                          None if lo == 0.0 else lo, None if hi == math.inf else hi)
        return Truncation(out, mass)
    if isinstance(params, NormalParams):
        lo0, hi0 = params.bounds
        lo, hi = max(lo0, a), min(hi0, b)
        if not lo < hi:
            raise ValidationError("empty truncation interval")
        mass = _normal_interval_mass((lo - params.mu) / params.sigma, (hi - params.mu) / params.sigma)
        if not mass > 0.0:
            raise ValidationError(f"zero prior mass on [{lo}, {hi}]")
        out = NormalParams(params.mu, params.sigma,
                           None if lo == -math.inf else lo, None if hi == math.inf else hi)
        return Truncation(out, mass)
    raise ValidationError(f"cannot truncate {type(params).__name__}")


def truncated_posterior_mean(post) -> float:
    """Posterior mean of a tail index under a Gamma truncated below at B:
    alpha beta (1 - F_{alpha+1,beta}(B)) / (1 - F_{alpha,beta}(B))."""
    params = post.params if isinstance(post, ParetoXiPosterior) else post
    if not isinstance(params, GammaParams):
        raise ValidationError("expected Gamma parameters")
    if params.is_truncated and params.mass < MIN_TRUNCATED_MASS:
        raise ValidationError(f"negligible posterior mass {params.mass:.3g} in truncation interval")
    return truncated_gamma_mean(params)
