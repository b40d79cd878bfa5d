"""Parameter types, distribution kernels and seeded samplers.

All scalar special functions come from the numerical core selected in
``_backend`` (compiled when available). Functions accept scalars or arrays
and return the same shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import kernels as _k
from .errors import ValidationError

MIN_TRUNCATED_MASS = 1e-12
_MASK64 = (1 << 64) - 1


def _finite(x, name):
    if not math.isfinite(x):
        raise ValidationError(f"{name} must be finite, got {x!r}")


def _positive(x, name):
    if not (math.isfinite(x) and x > 0.0):
        raise ValidationError(f"{name} must be positive and finite, got {x!r}")


def _probability(p, name="p"):
    if not (0.0 < p < 1.0):
        raise ValidationError(f"{name} must lie in (0, 1), got {p!r}")


def _scalar_or_array(fn, x, *args):
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return fn(float(arr), *args)
    out = np.empty(arr.shape)
    flat = out.reshape(-1)
    for i, v in enumerate(arr.reshape(-1)):
        flat[i] = fn(float(v), *args)
    return out


# -- parameter types ---------------------------------------------------------

@dataclass(frozen=True)
class GammaParams:
    """Gamma(alpha, beta) with shape ``alpha`` and scale ``beta``.

    Optional truncation to ``[lower_trunc, upper_trunc]``; the density is
    renormalised over that interval.
    """

    alpha: float
    beta: float
    lower_trunc: Optional[float] = None
    upper_trunc: Optional[float] = None

    def __post_init__(self):
        _positive(self.alpha, "alpha")
        _positive(self.beta, "beta")
        lo, hi = self.bounds
        if lo < 0.0 or math.isnan(lo) or math.isnan(hi) or hi <= lo:
            raise ValidationError(f"invalid truncation interval [{lo}, {hi}]")
        if self.is_truncated and not self.mass > 0.0:
            raise ValidationError(
                f"Gamma({self.alpha}, {self.beta}) has no mass on [{lo}, {hi}]")

    @property
    def is_truncated(self):
        lo, hi = self.bounds
        return lo > 0.0 or hi < math.inf

    @property
    def bounds(self):
        lo = 0.0 if self.lower_trunc is None else float(self.lower_trunc)
        hi = math.inf if self.upper_trunc is None else float(self.upper_trunc)
        return lo, hi

    def untruncated(self):
        return GammaParams(self.alpha, self.beta)

    @property
    def mass(self):
        """Untruncated probability of the truncation interval."""
        lo, hi = self.bounds
        return _gamma_interval_mass(self.alpha, self.beta, lo, hi)

    @property
    def mean(self):
        if not self.is_truncated:
            return self.alpha * self.beta
        return truncated_gamma_mean(self)

    @property
    def variance(self):
        if not self.is_truncated:
            return self.alpha * self.beta * self.beta
        # E[X^2] = alpha (alpha + 1) beta^2 * mass(alpha + 2) / mass(alpha)
        lo, hi = self.bounds
        m0 = _gamma_interval_mass(self.alpha, self.beta, lo, hi)
        m2 = _gamma_interval_mass(self.alpha + 2.0, self.beta, lo, hi)
        ex2 = self.alpha * (self.alpha + 1.0) * self.beta ** 2 * m2 / m0
        return max(ex2 - self.mean ** 2, 0.0)

    @property
    def vco(self):
        return math.sqrt(self.variance) / self.mean


@dataclass(frozen=True)
class NormalParams:
    """Normal(mu, sigma), optionally truncated to ``[lower_trunc, upper_trunc]``."""

    mu: float
    sigma: float
    lower_trunc: Optional[float] = None
    upper_trunc: Optional[float] = None

    def __post_init__(self):
        _finite(self.mu, "mu")
        _positive(self.sigma, "sigma")
        lo, hi = self.bounds
        if math.isnan(lo) or math.isnan(hi) or hi <= lo:
            raise ValidationError(f"invalid truncation interval [{lo}, {hi}]")
        if self.is_truncated and not self.mass > 0.0:
            raise ValidationError(
                f"Normal({self.mu}, {self.sigma}) has no mass on [{lo}, {hi}]")

    @property
    def bounds(self):
        lo = -math.inf if self.lower_trunc is None else float(self.lower_trunc)
        hi = math.inf if self.upper_trunc is None else float(self.upper_trunc)
        return lo, hi

    @property
    def is_truncated(self):
        lo, hi = self.bounds
        return lo > -math.inf or hi < math.inf

    def untruncated(self):
        return NormalParams(self.mu, self.sigma)

    @property
    def mass(self):
        lo, hi = self.bounds
        return _normal_interval_mass((lo - self.mu) / self.sigma, (hi - self.mu) / self.sigma)

    @property
    def mean(self):
        if not self.is_truncated:
            return self.mu
        lo, hi = self.bounds
        a = (lo - self.mu) / self.sigma
        b = (hi - self.mu) / self.sigma
        return self.mu + self.sigma * (_std_normal_pdf(a) - _std_normal_pdf(b)) / self.mass


@dataclass(frozen=True)
class LogNormalParams:
    mu: float
    sigma: float

    def __post_init__(self):
        _finite(self.mu, "mu")
        _positive(self.sigma, "sigma")

    @property
    def mean(self):
        return lognormal_mean(self.mu, self.sigma)


@dataclass(frozen=True)
class ParetoParams:
    """Single-parameter Pareto above ``threshold``: F(x) = 1 - (x / L)^-xi."""

    xi: float
    threshold: float

    def __post_init__(self):
        _positive(self.xi, "xi")
        _positive(self.threshold, "threshold")

    @property
    def mean(self):
        if self.xi <= 1.0:
            return math.inf
        return self.threshold * self.xi / (self.xi - 1.0)


@dataclass(frozen=True)
class PoissonParams:
    """Poisson counts with mean ``rate * exposure``."""

    rate: float
    exposure: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.rate) and self.rate >= 0.0):
            raise ValidationError(f"rate must be non-negative, got {self.rate!r}")
        _positive(self.exposure, "exposure")


@dataclass(frozen=True)
class NegBinParams:
    """Negative binomial with size ``r`` and success probability ``p``.

    pmf(n) = Gamma(n + r) / (Gamma(r) n!) (1 - p)^n p^r; mean r (1 - p) / p.
    """

    r: float
    p: float

    def __post_init__(self):
        _positive(self.r, "r")
        _probability(self.p, "p")

    @property
    def mean(self):
        return self.r * (1.0 - self.p) / self.p

    @property
    def variance(self):
        return self.r * (1.0 - self.p) / (self.p * self.p)


@dataclass(frozen=True)
class NormalInvChiSqParams:
    """Joint prior for (mu, sigma^2) of a lognormal severity.

    sigma^2 ~ InvChiSq(nu, beta), density proportional to
    (sigma^2 / beta)^(-nu/2 - 1) exp(-beta / (2 sigma^2)); then
    mu | sigma^2 ~ Normal(theta, sigma^2 / phi).
    """

    nu: float
    beta: float
    theta: float
    phi: float

    def __post_init__(self):
        _positive(self.nu, "nu")
        _positive(self.beta, "beta")
        _finite(self.theta, "theta")
        _positive(self.phi, "phi")

    @property
    def mu_scale(self):
        """Scale of the shifted-t marginal of mu."""
        return math.sqrt(self.beta / (self.phi * self.nu))

    @property
    def sigma_sq_mean(self):
        return self.beta / (self.nu - 2.0) if self.nu > 2.0 else math.inf


@dataclass
class RngStream:
    """Counter-based random stream identified by ``(seed, stream_index)``.

    Draw ``i`` of a stream is a pure function of (seed, stream_index, i), so
    a stream can be reproduced exactly and streams never overlap.
    """

    seed: int
    stream_index: int = 0
    counter: int = 0

    def __post_init__(self):
        if not (0 <= int(self.seed) <= _MASK64):
            raise ValidationError("seed must be a 64-bit unsigned integer")
        if int(self.stream_index) < 0:
            raise ValidationError("stream_index must be non-negative")
        self.seed = int(self.seed)
        self.stream_index = int(self.stream_index)
        self._key = _k.stream_key(self.seed, self.stream_index)

    @property
    def key(self):
        return self._key

    def spawn(self, stream_index):
        return RngStream(self.seed, stream_index)

    def uniforms(self, n):
        out = np.empty(int(n))
        self.counter = _k.sample_into(0, (), self._key, self.counter, out)
        return out

    def _fill(self, kind, params, n, paired=False):
        out = np.empty(int(n))
        out2 = np.empty(int(n)) if paired else None
        self.counter = _k.sample_into(kind, tuple(float(v) for v in params),
                                      self._key, self.counter, out, out2)
        return (out, out2) if paired else out


# -- gamma -------------------------------------------------------------------

def _gamma_interval_mass(alpha, beta, lo, hi):
    xl = lo / beta
    xh = hi / beta
    if _k.gamma_p(alpha, xl) <= 0.5:
        return _k.gamma_p(alpha, xh) - _k.gamma_p(alpha, xl)
    return _k.gamma_q(alpha, xl) - _k.gamma_q(alpha, xh)


def _gamma_cdf_scalar(x, alpha, beta, lo, hi):
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    if lo == 0.0 and hi == math.inf:
        return _k.gamma_p(alpha, x / beta)
    return min(_gamma_interval_mass(alpha, beta, lo, x) / _gamma_interval_mass(alpha, beta, lo, hi), 1.0)


def gamma_cdf(x, params: GammaParams):
    """Gamma CDF; for truncated parameters, the conditional CDF on the interval."""
    xa = np.asarray(x, dtype=float)
    if np.any(np.isnan(xa) | (xa == -np.inf)):
        raise ValidationError("x must be a number")
    lo, hi = params.bounds
    return _scalar_or_array(_gamma_cdf_scalar, x, params.alpha, params.beta, lo, hi)


def gamma_sf(x, params: GammaParams):
    """Upper-tail probability, accurate where the CDF rounds to 1."""
    lo, hi = params.bounds
    if not params.is_truncated:
        return _scalar_or_array(lambda v: _k.gamma_q(params.alpha, max(v, 0.0) / params.beta), x)
    return _scalar_or_array(
        lambda v: 1.0 if v <= lo else (0.0 if v >= hi else
                                        _gamma_interval_mass(params.alpha, params.beta, v, hi) / params.mass), x)


def gamma_logpdf(x, params: GammaParams):
    lo, hi = params.bounds
    a, b = params.alpha, params.beta
    lognorm = 0.0 if not params.is_truncated else math.log(params.mass)

    def f(v):
        if v < lo or v > hi or v <= 0.0:
            return -math.inf
        return (a - 1.0) * math.log(v) - v / b - a * math.log(b) - _k.lgamma(a) - lognorm
    return _scalar_or_array(f, x)


def gamma_pdf(x, params: GammaParams):
    return np.exp(gamma_logpdf(x, params)) if np.ndim(x) else math.exp(gamma_logpdf(x, params))


def _gamma_quantile_scalar(p, alpha, beta, lo, hi):
    if lo == 0.0 and hi == math.inf:
        return beta * _k.gamma_inv(alpha, p, 0)
    # conditional inverse transform on [lo, hi]
    pl = _k.gamma_p(alpha, lo / beta)
    if pl <= 0.5:
        ph = _k.gamma_p(alpha, hi / beta)
        x = beta * _k.gamma_inv(alpha, pl + p * (ph - pl), 0)
    else:
        ql = _k.gamma_q(alpha, lo / beta)
        qh = _k.gamma_q(alpha, hi / beta)
        x = beta * _k.gamma_inv(alpha, qh + (1.0 - p) * (ql - qh), 1)
    return min(max(x, lo), hi)


def gamma_quantile(p, params: GammaParams):
    """Inverse of :func:`gamma_cdf` (conditional on truncation)."""
    pa = np.asarray(p, dtype=float)
    if np.any((pa <= 0.0) | (pa >= 1.0)):
        raise ValidationError("p must lie in (0, 1)")
    lo, hi = params.bounds
    return _scalar_or_array(_gamma_quantile_scalar, p, params.alpha, params.beta, lo, hi)


def truncated_gamma_mean(params: GammaParams):
    """Mean of a (possibly truncated) Gamma.

    Uses E[X; lo < X < hi] = alpha beta [P(alpha + 1, .)] over the interval, so
    the ratio of incomplete-gamma masses at shapes alpha + 1 and alpha.
    """
    a, b = params.alpha, params.beta
    lo, hi = params.bounds
    if lo == 0.0 and hi == math.inf:
        return a * b
    if hi == math.inf:
        # log space keeps the ratio accurate deep in the upper tail
        return a * b * math.exp(_k.log_gamma_q(a + 1.0, lo / b) - _k.log_gamma_q(a, lo / b))
    return a * b * _gamma_interval_mass(a + 1.0, b, lo, hi) / _gamma_interval_mass(a, b, lo, hi)


# -- normal / lognormal ------------------------------------------------------

def _std_normal_pdf(z):
    if math.isinf(z):
        return 0.0
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _normal_interval_mass(a, b):
    if a > 0.0:
        return _k.norm_sf(a) - _k.norm_sf(b)
    return _k.norm_cdf(b) - _k.norm_cdf(a)


def std_normal_cdf(x):
    return _scalar_or_array(_k.norm_cdf, x)


def std_normal_quantile(q):
    """Standard normal quantile Z_q."""
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0.0) | (qa >= 1.0)):
        raise ValidationError("q must lie in (0, 1)")
    return _scalar_or_array(_k.norm_ppf, q)


def normal_cdf(x, params: NormalParams):
    lo, hi = params.bounds
    m, s = params.mu, params.sigma
    za, zb = (lo - m) / s, (hi - m) / s
    mass = params.mass

    def f(v):
        if v <= lo:
            return 0.0
        if v >= hi:
            return 1.0
        if not params.is_truncated:
            return _k.norm_cdf((v - m) / s)
        return min(_normal_interval_mass(za, (v - m) / s) / mass, 1.0)
    return _scalar_or_array(f, x)


def normal_logpdf(x, params: NormalParams):
    lo, hi = params.bounds
    m, s = params.mu, params.sigma
    lognorm = math.log(params.mass) if params.is_truncated else 0.0

    def f(v):
        if v < lo or v > hi:
            return -math.inf
        z = (v - m) / s
        return -0.5 * z * z - math.log(s) - 0.5 * math.log(2.0 * math.pi) - lognorm
    return _scalar_or_array(f, x)


def normal_pdf(x, params: NormalParams):
    return np.exp(normal_logpdf(x, params)) if np.ndim(x) else math.exp(normal_logpdf(x, params))


def _normal_quantile_scalar(p, m, s, lo, hi):
    if lo == -math.inf and hi == math.inf:
        return m + s * _k.norm_ppf(p)
    za, zb = (lo - m) / s, (hi - m) / s
    if za > 0.0:
        # work with upper tails for accuracy
        sa, sb = _k.norm_sf(za), _k.norm_sf(zb)
        z = -_k.norm_ppf(sb + (1.0 - p) * (sa - sb))
    else:
        ca, cb = _k.norm_cdf(za), _k.norm_cdf(zb)
        z = _k.norm_ppf(ca + p * (cb - ca))
    return min(max(m + s * z, lo), hi)


def normal_quantile(p, params: NormalParams):
    pa = np.asarray(p, dtype=float)
    if np.any((pa <= 0.0) | (pa >= 1.0)):
        raise ValidationError("p must lie in (0, 1)")
    lo, hi = params.bounds
    return _scalar_or_array(_normal_quantile_scalar, p, params.mu, params.sigma, lo, hi)


def lognormal_mean(mu, sigma):
    """E[X] = exp(mu + sigma^2 / 2)."""
    return np.exp(np.asarray(mu) + 0.5 * np.asarray(sigma) ** 2) if np.ndim(mu) or np.ndim(sigma) \
        else math.exp(mu + 0.5 * sigma * sigma)


def lognormal_quantile(q, mu, sigma):
    """exp(mu + sigma Z_q)."""
    _positive(float(sigma), "sigma")
    z = std_normal_quantile(q)
    return np.exp(mu + sigma * z) if np.ndim(z) else math.exp(mu + sigma * z)


def lognormal_cdf(x, mu, sigma):
    _positive(float(sigma), "sigma")
    return _scalar_or_array(
        lambda v: 0.0 if v <= 0.0 else _k.norm_cdf((math.log(v) - mu) / sigma), x)


# -- pareto ------------------------------------------------------------------

def pareto_quantile(q, params: ParetoParams):
    """L exp(-ln(1 - q) / xi)."""
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0.0) | (qa >= 1.0)):
        raise ValidationError("q must lie in (0, 1)")
    res = params.threshold * np.exp(-np.log1p(-qa) / params.xi)
    return float(res) if res.ndim == 0 else res


def pareto_cdf(x, params: ParetoParams):
    """1 - (x / L)^-xi for x >= L, else 0."""
    xa = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        res = np.where(xa <= params.threshold, 0.0,
                       -np.expm1(-params.xi * np.log(np.maximum(xa, params.threshold) / params.threshold)))
    return float(res) if res.ndim == 0 else res


def pareto_pdf(x, params: ParetoParams):
    xa = np.asarray(x, dtype=float)
    L, xi = params.threshold, params.xi
    with np.errstate(divide="ignore", invalid="ignore"):
        res = np.where(xa < L, 0.0, xi / L * (np.maximum(xa, L) / L) ** (-xi - 1.0))
    return float(res) if res.ndim == 0 else res


# -- discrete ----------------------------------------------------------------

def _negbin_logpmf(n, r, p):
    if n < 0 or n != math.floor(n):
        return -math.inf
    log1mp = math.log1p(-p)
    if n == 0:
        return r * math.log(p)
    return (math.lgamma(n + r) - math.lgamma(r) - math.lgamma(n + 1.0)
            + n * log1mp + r * math.log(p))


def negbin_pmf(n, params: NegBinParams):
    """Gamma(n + r) / (Gamma(r) n!) (1 - p)^n p^r."""
    return _scalar_or_array(lambda v: math.exp(_negbin_logpmf(v, params.r, params.p)), n)


def poisson_pmf(n, mean):
    def f(v):
        if v < 0 or v != math.floor(v):
            return 0.0
        if mean == 0.0:
            return 1.0 if v == 0 else 0.0
        return math.exp(v * math.log(mean) - mean - math.lgamma(v + 1.0))
    return _scalar_or_array(f, n)


# -- shifted t ---------------------------------------------------------------

def shifted_t_pdf(mu_val, params: NormalInvChiSqParams, normalized=True):
    """Marginal density of mu under a Normal-Inverse-chi^2 prior.

    The kernel is [1 + phi (mu - theta)^2 / beta]^(-(nu + 1) / 2). With
    ``normalized`` (default) it is scaled to integrate to one, i.e. the
    density of theta + sqrt(beta / (phi nu)) T_nu; otherwise the bare kernel
    (value 1 at the mode) is returned.
    """
    nu, beta, theta, phi = params.nu, params.beta, params.theta, params.phi
    lognorm = 0.0
    if normalized:
        lognorm = (math.lgamma(0.5 * (nu + 1.0)) - math.lgamma(0.5 * nu)
                   - 0.5 * math.log(nu * math.pi) - math.log(params.mu_scale))

    def f(v):
        d = v - theta
        return math.exp(lognorm - 0.5 * (nu + 1.0) * math.log1p(phi * d * d / beta))
    return _scalar_or_array(f, mu_val)


def shifted_t_cdf(mu_val, params: NormalInvChiSqParams):
    s = params.mu_scale
    return _scalar_or_array(lambda v: _k.t_cdf((v - params.theta) / s, params.nu), mu_val)


def shifted_t_quantile(q, params: NormalInvChiSqParams):
    qa = np.asarray(q, dtype=float)
    if np.any((qa <= 0.0) | (qa >= 1.0)):
        raise ValidationError("q must lie in (0, 1)")
    s = params.mu_scale
    return _scalar_or_array(lambda v: params.theta + s * _k.t_ppf(v, params.nu), q)


# -- sampling ----------------------------------------------------------------

def sample(dist, rng: RngStream, size=None):
    """Draw from ``dist`` using ``rng``.

    Returns a float (``size=None``) or an array. For
    :class:`NormalInvChiSqParams` the result is a ``(mu, sigma_sq)`` pair.
    """
    n = 1 if size is None else int(size)
    if isinstance(dist, GammaParams):
        if dist.is_truncated:
            if dist.mass < MIN_TRUNCATED_MASS:
                raise ValidationError(
                    f"truncation interval has negligible mass {dist.mass:.3g}")
            lo, hi = dist.bounds
            out = rng._fill(4, (dist.alpha, dist.beta, lo, hi), n)
            np.clip(out, lo, hi, out=out)
        else:
            out = rng._fill(3, (dist.alpha, dist.beta), n)
    elif isinstance(dist, NormalParams):
        if dist.is_truncated:
            if dist.mass < MIN_TRUNCATED_MASS:
                raise ValidationError(
                    f"truncation interval has negligible mass {dist.mass:.3g}")
            lo, hi = dist.bounds
            u = rng.uniforms(n)
            out = np.array([_normal_quantile_scalar(v, dist.mu, dist.sigma, lo, hi) for v in u])
        else:
            out = rng._fill(1, (dist.mu, dist.sigma), n)
    elif isinstance(dist, LogNormalParams):
        out = rng._fill(2, (dist.mu, dist.sigma), n)
    elif isinstance(dist, ParetoParams):
        out = rng._fill(5, (dist.xi, dist.threshold), n)
    elif isinstance(dist, PoissonParams):
        out = rng._fill(6, (dist.rate * dist.exposure,), n)
    elif isinstance(dist, NormalInvChiSqParams):
        mu, s2 = rng._fill(7, (dist.nu, dist.beta, dist.theta, dist.phi), n, paired=True)
        if size is None:
            return float(mu[0]), float(s2[0])
        return mu, s2
    else:
        raise ValidationError(f"cannot sample from {type(dist).__name__}")
    return float(out[0]) if size is None else out
