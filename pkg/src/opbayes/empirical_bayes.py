"""Gamma prior for Poisson rates estimated from multi-bank count panels.

Bank j reports counts N_{j,k} over years k with exposures V_{j,k}; given
its rate lambda_j the counts are Poisson(lambda_j V_{j,k}), and the rates are
i.i.d. Gamma(alpha, beta) across banks. The hyperparameters are estimated
by marginal maximum likelihood or by the method of moments on the
standardised frequencies F_{j,k} = N_{j,k} / V_{j,k}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from .distributions import GammaParams, NegBinParams
from .errors import ValidationError

# optimisation box on (ln alpha, ln beta); hitting it flags a boundary solution
LOG_ALPHA_BOUNDS = (-20.0, 30.0)
LOG_BETA_BOUNDS = (-40.0, 20.0)


@dataclass
class BankSeries:
    """Annual counts and exposures of one bank's cell."""

    bank_id: str
    years: np.ndarray
    counts: np.ndarray
    exposures: np.ndarray

    def __post_init__(self):
        self.years = np.asarray(self.years).reshape(-1)
        self.counts = np.asarray(self.counts, dtype=float).reshape(-1)
        self.exposures = np.asarray(self.exposures, dtype=float).reshape(-1)
        if not (self.years.size == self.counts.size == self.exposures.size):
            raise ValidationError(f"bank {self.bank_id}: column lengths differ")
        if np.any(~np.isfinite(self.counts)) or np.any(self.counts < 0):
            raise ValidationError(f"bank {self.bank_id}: counts must be non-negative")
        if np.any(~np.isfinite(self.exposures)) or np.any(self.exposures <= 0):
            raise ValidationError(f"bank {self.bank_id}: exposures must be positive")

    @property
    def n_years(self):
        return self.counts.size

    @property
    def total_count(self):
        return float(self.counts.sum())

    @property
    def total_exposure(self):
        return float(self.exposures.sum())


@dataclass
class CountPanel:
    """Count series for one risk cell across banks.

    With ``prescaled`` the ``counts`` hold standardised frequencies N / V
    rather than raw counts; the method of moments uses them directly and
    the likelihood recovers N = F V.
    """

    banks: List[BankSeries]
    prescaled: bool = False

    @classmethod
    def from_records(cls, records: Iterable[Tuple], prescaled: bool = False):
        """Build from ``(bank_id, year, count, exposure)`` tuples, keeping
        first-seen bank order and sorting each bank by year."""
        grouped = {}
        for bank_id, year, count, exposure in records:
            grouped.setdefault(str(bank_id), []).append((year, float(count), float(exposure)))
        banks = []
        for bank_id, rows in grouped.items():
            rows.sort(key=lambda r: r[0])
            y, c, v = zip(*rows)
            banks.append(BankSeries(bank_id, np.array(y), np.array(c), np.array(v)))
        return cls(banks, prescaled)

    @property
    def n_banks(self):
        return len(self.banks)

    def raw_counts(self, bank: BankSeries):
        if not self.prescaled:
            return bank.counts
        n = bank.counts * bank.exposures
        if np.any(np.abs(n - np.round(n)) > 1e-9 * np.maximum(1.0, n)):
            raise ValidationError("prescaled frequencies times exposures are not whole counts")
        return np.round(n)

    def totals(self):
        """(N_j, V_j) arrays of per-bank totals."""
        n = np.array([self.raw_counts(b).sum() for b in self.banks], dtype=float)
        v = np.array([b.total_exposure for b in self.banks], dtype=float)
        return n, v

    def frequencies(self, bank: BankSeries):
        return bank.counts if self.prescaled else bank.counts / bank.exposures


@dataclass
class HyperEstimate:
    """Estimated Gamma hyperparameters; lambda0 = alpha beta, sigma0_sq = alpha beta^2.

    ``alpha``/``beta`` are None when no cross-bank heterogeneity is detected
    (``homogeneous``); ``sigma0_sq_raw`` is the unclamped moment estimate.
    """

    alpha: Optional[float]
    beta: Optional[float]
    lambda0: float
    sigma0_sq: float
    method: str
    loglik: Optional[float] = None
    sigma0_sq_raw: Optional[float] = None
    homogeneous: bool = False
    boundary: bool = False
    grad_norm: Optional[float] = None
    message: str = ""

    @property
    def prior(self) -> GammaParams:
        if self.alpha is None:
            raise ValidationError("homogeneous estimate: no Gamma prior defined")
        return GammaParams(self.alpha, self.beta)


def _check_params(alpha, beta):
    if not (alpha > 0 and beta > 0 and math.isfinite(alpha) and math.isfinite(beta)):
        raise ValidationError("alpha and beta must be positive and finite")


def _loglik_terms(alpha, beta, n, v):
    # ln Gamma(a + N) - ln Gamma(a) - a ln b - (a + N) ln(1/b + V), written as
    # ... + N ln b - (a + N) ln(1 + b V) to avoid cancellation for small b
    return (special.gammaln(alpha + n) - special.gammaln(alpha)
            + n * math.log(beta) - (alpha + n) * np.log1p(beta * v))


def neg_log_likelihood(alpha: float, beta: float, panel: CountPanel) -> float:
    """Negative marginal log-likelihood (up to terms free of alpha, beta):
    -sum_j [ln G(a + N_j) - ln G(a) - a ln b - (a + N_j) ln(1/b + V_j)]."""
    _check_params(alpha, beta)
    n, v = panel.totals()
    return -float(np.sum(_loglik_terms(alpha, beta, n, v)))


def neg_log_likelihood_grad(alpha: float, beta: float, panel: CountPanel) -> np.ndarray:
    """Gradient of :func:`neg_log_likelihood` with respect to (alpha, beta)."""
    _check_params(alpha, beta)
    n, v = panel.totals()
    da = special.digamma(alpha + n) - special.digamma(alpha) - np.log1p(beta * v)
    db = n / beta - (alpha + n) * v / (1.0 + beta * v)
    return -np.array([da.sum(), db.sum()])


def fit_mom(panel: CountPanel, inverse_k_power: int = 2) -> HyperEstimate:
    """Method-of-moments estimate.

    lambda_j = mean_k F_{j,k}; lambda0 = mean_j lambda_j;
    sigma0^2 = sample variance of lambda_j - (lambda0 / J) sum_j K_j^-2 sum_k 1/V_{j,k},
    clamped at 0. This is unbiased for both moments. ``inverse_k_power=1``
    uses K_j^-1 in place of K_j^-2 instead (biased whenever K_j > 1; kept
    for comparison with results computed that way).
    """
    if inverse_k_power not in (1, 2):
        raise ValidationError("inverse_k_power must be 1 or 2")
    J = panel.n_banks
    if J < 2:
        raise ValidationError("method of moments needs at least two banks")
    lam = np.empty(J)
    noise = 0.0
    for j, bank in enumerate(panel.banks):
        if bank.n_years < 1:
            raise ValidationError(f"bank {bank.bank_id} has no records")
        lam[j] = panel.frequencies(bank).mean()
        noise += np.sum(1.0 / bank.exposures) / bank.n_years ** inverse_k_power
    lam0 = float(lam.mean())
    raw = float(np.sum((lam - lam0) ** 2) / (J - 1) - lam0 / J * noise)
    s2 = max(raw, 0.0)
    if s2 > 0.0 and lam0 > 0.0:
        beta = s2 / lam0
        alpha = lam0 / beta
        return HyperEstimate(alpha, beta, lam0, s2, "mom", sigma0_sq_raw=raw)
    return HyperEstimate(None, None, lam0, 0.0, "mom", sigma0_sq_raw=raw, homogeneous=True,
                         message="no cross-bank heterogeneity detected (sigma0^2 clamped to 0)")


def _newton_polish(alpha, beta, panel, steps=8):
    x = np.array([alpha, beta])
    for _ in range(steps):
        g = neg_log_likelihood_grad(x[0], x[1], panel)
        h = np.empty((2, 2))
        for i in range(2):
            e = np.zeros(2)
            e[i] = 1e-6 * x[i]
            h[:, i] = (neg_log_likelihood_grad(*(x + e), panel)
                       - neg_log_likelihood_grad(*(x - e), panel)) / (2.0 * e[i])
        h = 0.5 * (h + h.T)
        try:
            step = np.linalg.solve(h, g)
        except np.linalg.LinAlgError:
            break
        if np.any(np.linalg.eigvalsh(h) <= 0):
            break
        xn = x - step
        t = 1.0
        while np.any(xn <= 0) and t > 1e-8:
            t *= 0.5
            xn = x - t * step
        if np.any(xn <= 0):
            break
        if neg_log_likelihood(*xn, panel) > neg_log_likelihood(*x, panel) + 1e-9:
            break
        x = xn
        if np.linalg.norm(step) <= 1e-15 * np.linalg.norm(x):
            break
    return float(x[0]), float(x[1])


def fit_mle(panel: CountPanel, start: Optional[Tuple[float, float]] = None) -> HyperEstimate:
    """Maximum marginal likelihood estimate of (alpha, beta).

    Optimises over (ln alpha, ln beta) with the analytic gradient from the
    moment estimate and two perturbations of it, keeps the best, then
    polishes with Newton steps. Optima on the edge of the search box (e.g.
    all counts zero, or no over-dispersion) are flagged ``boundary``.
    """
    J = panel.n_banks
    if J < 2:
        raise ValidationError("maximum likelihood needs at least two banks")
    n, v = panel.totals()

    def f(x):
        a, b = math.exp(x[0]), math.exp(x[1])
        return -float(np.sum(_loglik_terms(a, b, n, v)))

    def grad(x):
        a, b = math.exp(x[0]), math.exp(x[1])
        da = special.digamma(a + n) - special.digamma(a) - np.log1p(b * v)
        db = n / b - (a + n) * v / (1.0 + b * v)
        return -np.array([a * da.sum(), b * db.sum()])

    rate = max(n.sum() / v.sum(), 1e-12)
    if start is None:
        mom = fit_mom(panel) if not panel.prescaled else None
        if mom is not None and not mom.homogeneous:
            a0, b0 = mom.alpha, mom.beta
        else:
            a0, b0 = 1.0, rate
    else:
        a0, b0 = start
    starts = [(a0, b0), (a0 * 0.5, b0 * 2.0), (a0 * 2.0, b0 * 0.5)]
    bounds = [LOG_ALPHA_BOUNDS, LOG_BETA_BOUNDS]
    best = None
    for a, b in starts:
        x0 = np.clip([math.log(a), math.log(b)], [lo for lo, _ in bounds], [hi for _, hi in bounds])
        sol = optimize.minimize(f, x0, jac=grad, method="L-BFGS-B", bounds=bounds,
                                options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 2000})
        if best is None or sol.fun < best.fun:
            best = sol
    la, lb = best.x
    on_edge = (min(la - LOG_ALPHA_BOUNDS[0], LOG_ALPHA_BOUNDS[1] - la,
                   lb - LOG_BETA_BOUNDS[0], LOG_BETA_BOUNDS[1] - lb) < 1e-3)
    alpha, beta = math.exp(la), math.exp(lb)
    # no over-dispersion: the likelihood keeps rising toward the Poisson
    # limit (alpha -> inf with alpha beta fixed); once beta V_j is negligible
    # the rate heterogeneity is below the resolution of the likelihood
    no_dispersion = bool(n.sum() > 0 and (
        math.exp(lb) * v.max() < 1e-6
        or f([la + math.log(10.0), lb - math.log(10.0)]) <= best.fun))
    boundary = bool(on_edge or n.sum() == 0 or no_dispersion)
    msg = ""
    if not boundary:
        alpha, beta = _newton_polish(alpha, beta, panel)
    elif n.sum() == 0:
        msg = "boundary solution: no events observed, likelihood maximal as beta -> 0"
    else:
        msg = "boundary solution: no over-dispersion across banks, likelihood maximal as alpha -> inf"
    g = neg_log_likelihood_grad(alpha, beta, panel)
    return HyperEstimate(alpha, beta, alpha * beta, alpha * beta * beta, "mle",
                         loglik=-neg_log_likelihood(alpha, beta, panel),
                         homogeneous=bool(boundary and n.sum() > 0), boundary=boundary,
                         grad_norm=float(np.linalg.norm(g)), message=msg)


def bank_posterior(hyper, bank: BankSeries, prescaled: bool = False) -> GammaParams:
    """alpha + sum_k N_{j,k}, beta / (1 + beta sum_k V_{j,k})."""
    if isinstance(hyper, HyperEstimate):
        alpha, beta = hyper.prior.alpha, hyper.prior.beta
    elif isinstance(hyper, GammaParams):
        alpha, beta = hyper.alpha, hyper.beta
    else:
        alpha, beta = hyper
    _check_params(alpha, beta)
    counts = bank.counts * bank.exposures if prescaled else bank.counts
    return GammaParams(alpha + float(np.sum(counts)), beta / (1.0 + beta * bank.total_exposure))


def predictive_counts(posterior: GammaParams, next_exposure: float = 1.0) -> NegBinParams:
    """Next-year count distribution: NegBin(r = alpha, p = 1 / (1 + V beta))."""
    if not (next_exposure > 0 and math.isfinite(next_exposure)):
        raise ValidationError("exposure must be positive")
    return NegBinParams(posterior.alpha, 1.0 / (1.0 + next_exposure * posterior.beta))


def simulate_panel(alpha: float, beta: float, exposures: Sequence[Sequence[float]], rng) -> CountPanel:
    """Synthetic panel: lambda_j ~ Gamma(alpha, beta), N_{j,k} ~ Poisson(lambda_j V_{j,k}).

    ``rng`` is a :class:`numpy.random.Generator`.
    """
    banks = []
    for j, vs in enumerate(exposures):
        vs = np.asarray(vs, dtype=float)
        lam = rng.gamma(alpha, beta)
        counts = rng.poisson(lam * vs)
        banks.append(BankSeries(str(j), np.arange(1, vs.size + 1), counts, vs))
    return CountPanel(banks)
