"""Fit prior hyperparameters to expert opinions.

An expert states a best estimate of some functional (a rate, an expected
loss, a quantile, a tail index) and how uncertain it is, either as an
interval [a, b] holding the true value with probability p or as a
coefficient of variation. Each fit returns a :class:`FitReport` holding the
parameters and the residual of every matched equation.

Two-equation fits are reduced to one dimension: the mean equation is solved
for the scale at fixed shape, and the interval equation is then a scalar
root in the shape, bracketed on a log grid and refined with Brent's method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from ._backend import kernels as _k
from .distributions import (
    GammaParams,
    NormalParams,
    _gamma_interval_mass,
    _normal_interval_mass,
    gamma_quantile,
    gamma_pdf,
    truncated_gamma_mean,
)
from .errors import ConvergenceError, InfeasibleError, ValidationError

DEFAULT_PROB = 2.0 / 3.0
RESIDUAL_TOL = 1e-8
ALPHA_RANGE = (1e-4, 1e6)
SIGMA0_RANGE = (1e-6, 50.0)
MAX_ITER = 200
_GRID = 161


@dataclass(frozen=True)
class ExpertOpinion:
    """One elicited statement.

    ``functional`` is ``"mean"``, ``"quantile"`` (level ``q``),
    ``"quantile_ratio"`` (levels ``q`` < ``q2``) or ``"vco"``. ``point`` is
    the best estimate; uncertainty is ``interval`` with probability ``prob``
    or a coefficient of variation ``vco``.
    """

    functional: str
    point: float
    interval: Optional[tuple] = None
    prob: float = DEFAULT_PROB
    q: Optional[float] = None
    q2: Optional[float] = None
    vco: Optional[float] = None

    def __post_init__(self):
        if self.functional not in ("mean", "quantile", "quantile_ratio", "vco"):
            raise ValidationError(f"unknown functional {self.functional!r}")
        if not (math.isfinite(self.point) and self.point > 0):
            raise ValidationError("point estimate must be positive")
        if self.interval is not None:
            a, b = self.interval
            if not (0 <= a < b):
                raise ValidationError(f"interval must satisfy 0 <= a < b, got {self.interval}")
            object.__setattr__(self, "interval", (float(a), float(b)))
        if not (0.0 < self.prob < 1.0):
            raise ValidationError("prob must lie in (0, 1)")
        if self.functional in ("quantile", "quantile_ratio") and not (self.q is not None and 0 < self.q < 1):
            raise ValidationError("quantile opinions need a level q in (0, 1)")
        if self.functional == "quantile_ratio" and not (self.q2 is not None and self.q < self.q2 < 1):
            raise ValidationError("quantile_ratio needs q < q2 < 1")
        if self.vco is not None and not (self.vco > 0):
            raise ValidationError("vco must be positive")
        if self.interval is None and self.vco is None and self.functional not in ("quantile_ratio",):
            raise ValidationError("opinion needs an interval or a vco to pin two parameters")


@dataclass
class FitReport:
    """Fitted parameters with per-equation residuals.

    For the dedicated solvers ``converged`` implies every residual is within
    1e-8. For :func:`fit_least_squares` it means the optimiser stopped
    normally; ``exact`` tells whether all residuals vanished.
    """

    params: object
    residuals: tuple
    iterations: int
    converged: bool
    equations: tuple = ()
    message: str = ""
    cost: float = 0.0

    @property
    def max_residual(self):
        return max((abs(r) for r in self.residuals), default=0.0)

    @property
    def exact(self):
        return self.max_residual <= RESIDUAL_TOL


def _opinion_args(first, interval, prob, functional="mean"):
    if isinstance(first, ExpertOpinion):
        if first.interval is None:
            raise ValidationError("this fit needs an interval opinion")
        return first.point, first.interval, first.prob
    if interval is None:
        raise ValidationError("interval is required")
    a, b = float(interval[0]), float(interval[1])
    if not (0 <= a < b):
        raise ValidationError(f"interval must satisfy 0 <= a < b, got {interval}")
    if not (0.0 < prob < 1.0):
        raise ValidationError("prob must lie in (0, 1)")
    return float(first), (a, b), float(prob)


class _Counter:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def _bracketed_root(fn, lo, hi, n_grid=_GRID, log=True):
    """First sign change of ``fn`` on a grid over [lo, hi], refined by Brent.

    Returns ``(root, n_roots_seen, best)`` where ``best`` is the grid point
    of smallest |fn| (used in error reports when there is no root).
    """
    xs = np.exp(np.linspace(math.log(lo), math.log(hi), n_grid)) if log else np.linspace(lo, hi, n_grid)
    vals = np.array([fn(float(x)) for x in xs])
    finite = np.isfinite(vals)
    signs = np.sign(vals)
    changes = [i for i in range(n_grid - 1)
               if finite[i] and finite[i + 1] and signs[i] != signs[i + 1]]
    best = float(xs[np.nanargmin(np.where(finite, np.abs(vals), np.nan))]) if finite.any() else None
    if not changes:
        return None, 0, best
    i = changes[0]
    if vals[i] == 0.0:
        return float(xs[i]), len(changes), best
    if log:
        t = optimize.brentq(lambda s: fn(math.exp(s)), math.log(xs[i]), math.log(xs[i + 1]),
                            xtol=1e-15, rtol=1e-15, maxiter=MAX_ITER)
        return math.exp(t), len(changes), best
    return optimize.brentq(fn, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15, maxiter=MAX_ITER), len(changes), best


# -- Gamma: mean and interval ------------------------------------------------

def _conditional_mass(alpha, beta, a, b, lower):
    lo = max(a, lower)
    if b <= lo:
        return 0.0
    if lower > 0.0:
        # ratios of upper tails in log space survive when Q(alpha, B/beta) underflows
        lq_b = _k.log_gamma_q(alpha, lower / beta)
        if lq_b > -0.7:
            return _gamma_interval_mass(alpha, beta, lo, b) / math.exp(lq_b)
        return (math.exp(_k.log_gamma_q(alpha, lo / beta) - lq_b)
                - math.exp(_k.log_gamma_q(alpha, b / beta) - lq_b))
    return _gamma_interval_mass(alpha, beta, lo, b)


def _truncated_mean(alpha, beta, lower):
    x = lower / beta
    return alpha * beta * math.exp(_k.log_gamma_q(alpha + 1.0, x) - _k.log_gamma_q(alpha, x))


def _scale_for_mean(alpha, mean, lower):
    """Scale beta giving the (truncated) Gamma mean ``mean`` at shape ``alpha``."""
    if lower <= 0.0:
        return mean / alpha
    # the truncated mean increases from ``lower`` to infinity with beta
    def f(t):
        return _truncated_mean(alpha, math.exp(t), lower) / mean - 1.0
    t0 = math.log(mean / alpha)
    lo, hi = t0 - 1.0, t0 + 1.0
    flo, fhi = f(lo), f(hi)
    step = 2.0
    while flo > 0.0:
        lo -= step
        step *= 2.0
        flo = f(lo)
        if lo < -745.0:
            raise InfeasibleError("no scale reproduces the mean")
    step = 2.0
    while fhi < 0.0:
        hi += step
        step *= 2.0
        fhi = f(hi)
        if hi > 709.0:
            raise InfeasibleError("no scale reproduces the mean")
    return math.exp(optimize.brentq(f, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=MAX_ITER))


def _fit_gamma_mean_interval(mean, a, b, p, lower, equation_names):
    if lower > 0.0 and not mean > lower:
        raise InfeasibleError(f"expected value {mean} must exceed the lower bound {lower}")

    def mass_at(alpha):
        beta = _scale_for_mean(alpha, mean, lower)
        return _conditional_mass(alpha, beta, a, b, lower)

    g = _Counter(lambda al: mass_at(al) - p)
    try:
        root, n_roots, best = _bracketed_root(g, *ALPHA_RANGE)
    except (RuntimeError, ValueError) as exc:
        raise ConvergenceError(f"root search failed: {exc}") from exc
    if root is None:
        best_mass = mass_at(best) if best is not None else float("nan")
        rep = FitReport(None, (), g.calls, False, equation_names,
                        f"no shape in [{ALPHA_RANGE[0]:g}, {ALPHA_RANGE[1]:g}] gives "
                        f"probability {p:.6g} on [{a:g}, {b:g}]; closest is {best_mass:.6g} at alpha={best:.6g}")
        raise InfeasibleError(rep.message, rep)
    alpha = root
    beta = _scale_for_mean(alpha, mean, lower)
    params = GammaParams(alpha, beta, lower if lower > 0.0 else None)
    res = (truncated_gamma_mean(params) / mean - 1.0,
           _conditional_mass(alpha, beta, a, b, lower) - p)
    msg = "" if n_roots <= 1 else f"{n_roots} roots on the shape grid; returned the smallest shape"
    rep = FitReport(params, res, g.calls, max(abs(r) for r in res) <= RESIDUAL_TOL, equation_names, msg)
    if not rep.converged:
        raise ConvergenceError(f"residuals {res} above tolerance", rep)
    return rep


def fit_poisson_gamma(mean, interval=None, prob: float = DEFAULT_PROB) -> FitReport:
    """Gamma(alpha, beta) prior for a Poisson rate with alpha beta = ``mean``
    and Pr[a <= lambda <= b] = ``prob``.

    Residuals are (relative mean error, probability error).
    """
    mean, (a, b), p = _opinion_args(mean, interval, prob)
    if not mean > 0:
        raise ValidationError("mean must be positive")
    if not a > 0:
        raise ValidationError("interval must be inside (0, inf)")
    return _fit_gamma_mean_interval(mean, a, b, p, 0.0, ("mean", "interval"))


def fit_poisson_gamma_vco(mean: float, vco: float) -> GammaParams:
    """alpha = 1 / vco^2, beta = mean / alpha."""
    if not (mean > 0 and vco > 0):
        raise ValidationError("mean and vco must be positive")
    alpha = 1.0 / (vco * vco)
    return GammaParams(alpha, mean / alpha)


def fit_pareto_gamma(lower_bound: float, mean=None, interval=None,
                     prob: float = DEFAULT_PROB) -> FitReport:
    """Gamma prior on a Pareto tail index, truncated below at ``lower_bound``.

    Matches the truncated mean E[xi] = alpha beta Q(alpha + 1, B/beta) / Q(alpha, B/beta)
    and the conditional probability of [a, b].
    """
    mean, (a, b), p = _opinion_args(mean, interval, prob)
    B = float(lower_bound)
    if not (B >= 0.0 and math.isfinite(B)):
        raise ValidationError("lower bound must be >= 0")
    if a < B:
        raise ValidationError(f"interval start {a} is below the lower bound {B}")
    return _fit_gamma_mean_interval(mean, a, b, p, B, ("mean", "interval"))


def loss_interval_to_xi(a, b, threshold, lower_bound):
    """Tail-index interval equivalent to an expected-loss interval [a, b].

    mu(xi) = L xi / (xi - 1) is decreasing, so [a, b] maps to
    [b / (b - L), a / (a - L)]. Requires L < a < b <= B L / (B - 1).
    """
    L, B = float(threshold), float(lower_bound)
    if not B > 1.0:
        raise ValidationError("expected-loss opinions need a lower bound B > 1")
    cap = B * L / (B - 1.0)
    if not (L < a < b):
        raise ValidationError(f"need L < a < b, got L={L}, a={a}, b={b}")
    if b > cap:
        raise ValidationError(f"upper bound {b} exceeds B L / (B - 1) = {cap:.12g}")
    return b / (b - L), a / (a - L)


def quantile_interval_to_xi(q, a, b, threshold, lower_bound):
    """Tail-index interval equivalent to a q-quantile interval [a, b]:
    [C1, C2] with C1 = -ln(1 - q) / ln(b / L), C2 = -ln(1 - q) / ln(a / L).
    Requires L < a < b <= L exp(-ln(1 - q) / B)."""
    L, B = float(threshold), float(lower_bound)
    if not (0.0 < q < 1.0):
        raise ValidationError("q must lie in (0, 1)")
    if not (L < a < b):
        raise ValidationError(f"need L < a < b, got L={L}, a={a}, b={b}")
    if B > 0.0:
        cap = L * math.exp(-math.log1p(-q) / B)
        if b > cap:
            raise ValidationError(f"upper bound {b} exceeds L exp(-ln(1 - q) / B) = {cap:.12g}")
    c = -math.log1p(-q)
    return c / math.log(b / L), c / math.log(a / L)


def _companion_fit(lo_xi, hi_xi, p, lower_bound, companion, name):
    if companion is None:
        raise ValidationError(
            "one interval pins only one of (alpha, beta); supply a companion "
            "E[xi] or a second constraint")
    return _fit_gamma_mean_interval(float(companion), lo_xi, hi_xi, p, float(lower_bound),
                                    ("mean", name))


def fit_pareto_gamma_from_mean_interval(lower_bound, threshold, a, b, prob=DEFAULT_PROB,
                                        companion=None) -> FitReport:
    """Truncated Gamma tail-index prior from an expected-loss interval.

    Pr[a <= L xi / (xi - 1) <= b] = p is one equation; ``companion`` supplies
    the second: a float E[xi], or a :class:`Constraint` / list of them (then
    solved by least squares together with this interval).
    """
    lo, hi = loss_interval_to_xi(a, b, threshold, lower_bound)
    if isinstance(companion, (int, float)) or companion is None:
        return _companion_fit(lo, hi, prob, lower_bound, companion, "loss_interval")
    extra = list(companion) if isinstance(companion, (list, tuple)) else [companion]
    cons = [Constraint("pareto_loss_interval", prob, a=a, b=b)] + extra
    return fit_least_squares(cons, family="gamma", lower_bound=lower_bound, threshold=threshold)


def fit_pareto_gamma_from_quantile_interval(lower_bound, threshold, q, a, b, prob=DEFAULT_PROB,
                                            companion=None) -> FitReport:
    """Truncated Gamma tail-index prior from a q-quantile interval; see
    :func:`fit_pareto_gamma_from_mean_interval` for ``companion``."""
    lo, hi = quantile_interval_to_xi(q, a, b, threshold, lower_bound)
    if isinstance(companion, (int, float)) or companion is None:
        return _companion_fit(lo, hi, prob, lower_bound, companion, "quantile_interval")
    extra = list(companion) if isinstance(companion, (list, tuple)) else [companion]
    cons = [Constraint("pareto_quantile_interval", prob, a=a, b=b, q=q)] + extra
    return fit_least_squares(cons, family="gamma", lower_bound=lower_bound, threshold=threshold)


# -- LogNormal location prior ------------------------------------------------

def _fit_normal_prior(offset, point, a, b, p):
    """mu0 = ln(point) - offset - sigma0^2 / 2 and
    Phi[(ln b - offset - mu0) / sigma0] - Phi[(ln a - offset - mu0) / sigma0] = p."""
    if not (a > 0):
        raise ValidationError("interval must be inside (0, inf)")
    lp, la, lb = math.log(point), math.log(a), math.log(b)

    def mass(s0):
        mu0 = lp - offset - 0.5 * s0 * s0
        return _normal_interval_mass((la - offset - mu0) / s0, (lb - offset - mu0) / s0)

    g = _Counter(lambda s0: mass(s0) - p)
    root, n_roots, best = _bracketed_root(g, *SIGMA0_RANGE)
    if root is None:
        rep = FitReport(None, (), g.calls, False, ("mean", "interval"),
                        f"no sigma0 in ({SIGMA0_RANGE[0]:g}, {SIGMA0_RANGE[1]:g}) gives probability "
                        f"{p:.6g}; closest {mass(best):.6g} at sigma0={best:.6g}")
        raise InfeasibleError(rep.message, rep)
    s0 = root
    mu0 = lp - offset - 0.5 * s0 * s0
    res = (math.exp(mu0 + offset + 0.5 * s0 * s0) / point - 1.0, mass(s0) - p)
    msg = "" if n_roots <= 1 else f"{n_roots} roots on the sigma0 grid; returned the smallest"
    rep = FitReport(NormalParams(mu0, s0), res, g.calls,
                    max(abs(r) for r in res) <= RESIDUAL_TOL, ("mean", "interval"), msg)
    if not rep.converged:
        raise ConvergenceError(f"residuals {res} above tolerance", rep)
    return rep


def fit_lognormal_mu_prior_from_mean(sigma: float, mean=None, interval=None,
                                     prob: float = DEFAULT_PROB) -> FitReport:
    """Normal(mu0, sigma0) prior on the log-location with known ``sigma``,
    from the expected loss M = exp(mu + sigma^2/2): E[M] and Pr[a <= M <= b]."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    point, (a, b), p = _opinion_args(mean, interval, prob)
    return _fit_normal_prior(0.5 * sigma * sigma, point, a, b, p)


def fit_lognormal_mu_prior_from_quantile(sigma: float, q: float, expected_quantile=None,
                                         interval=None, prob: float = DEFAULT_PROB) -> FitReport:
    """As :func:`fit_lognormal_mu_prior_from_mean` for the q-quantile
    Q_q = exp(mu + sigma Z_q)."""
    if not sigma > 0:
        raise ValidationError("sigma must be positive")
    if not (0.0 < q < 1.0):
        raise ValidationError("q must lie in (0, 1)")
    point, (a, b), p = _opinion_args(expected_quantile, interval, prob)
    return _fit_normal_prior(sigma * _k.norm_ppf(q), point, a, b, p)


def fit_lognormal_mu_prior_vco(sigma: float, expected: float, vco: float,
                               q: Optional[float] = None) -> NormalParams:
    """Closed form when the uncertainty is a coefficient of variation.

    The functional (expected loss, or the q-quantile when ``q`` is given) is
    LogNormal(mu0 + c, sigma0) with c = sigma^2/2 or sigma Z_q, so
    Vco = sqrt(exp(sigma0^2) - 1) and E = exp(mu0 + c + sigma0^2 / 2).
    """
    if not (sigma > 0 and expected > 0 and vco > 0):
        raise ValidationError("sigma, expected and vco must be positive")
    c = 0.5 * sigma * sigma if q is None else sigma * _k.norm_ppf(q)
    s0sq = math.log1p(vco * vco)
    return NormalParams(math.log(expected) - c - 0.5 * s0sq, math.sqrt(s0sq))


def sigma_from_quantile_ratio(q1: float, q2: float, ratio: float) -> float:
    """sigma = ln(Q_q2 / Q_q1) / (Z_q2 - Z_q1)."""
    if not (0.0 < q1 < q2 < 1.0):
        raise ValidationError("need 0 < q1 < q2 < 1")
    if not ratio > 1.0:
        raise ValidationError("quantile ratio must exceed 1")
    return math.log(ratio) / (_k.norm_ppf(q2) - _k.norm_ppf(q1))


# -- expected functionals of a truncated Gamma tail index --------------------

def truncated_gamma_expected_functional(params: GammaParams, functional: str,
                                        threshold: float = 1.0, q: Optional[float] = None,
                                        epsrel: float = 1e-10) -> float:
    """E[mu(xi)] with mu(xi) = L xi / (xi - 1), or E[Q_q(xi)] with
    Q_q(xi) = L exp(-ln(1 - q) / xi), under the (truncated) Gamma prior.

    Adaptive quadrature over the central 1 - 2e-16 probability range of the
    prior; the omitted tails contribute at most 1e-16 times the integrand
    bound, far below the requested tolerance.
    """
    L = float(threshold)
    lo_b, hi_b = params.bounds
    if functional == "expected_loss":
        if not lo_b > 1.0:
            raise ValidationError("expected loss needs the tail index truncated below at B > 1")

        def h(x):
            return L * x / (x - 1.0)
    elif functional == "expected_quantile":
        if q is None or not (0.0 < q < 1.0):
            raise ValidationError("expected_quantile needs q in (0, 1)")
        c = -math.log1p(-q)

        def h(x):
            return L * math.exp(c / x)
    else:
        raise ValidationError(f"unknown functional {functional!r}")
    eps = 1e-16
    lo = max(lo_b, float(gamma_quantile(eps, params)))
    hi = float(gamma_quantile(1.0 - eps, params)) if params.mass > 1e-3 else float(
        gamma_quantile(1.0 - 1e-12, params))
    mode = (params.alpha - 1.0) * params.beta
    pts = [v for v in (mode, params.alpha * params.beta) if lo < v < hi] if math.isfinite(hi) else []
    val, _ = integrate.quad(lambda x: h(x) * gamma_pdf(x, params), lo, hi, points=pts or None,
                            epsabs=0.0, epsrel=epsrel, limit=400)
    return val


# -- least squares over several opinions -------------------------------------

_GAMMA_EQ = ("gamma_mean", "gamma_interval", "gamma_vco", "pareto_expected_loss",
             "pareto_expected_quantile", "pareto_loss_interval", "pareto_quantile_interval")
_NORMAL_EQ = ("lognormal_mean", "lognormal_mean_interval", "lognormal_quantile",
              "lognormal_quantile_interval")


@dataclass(frozen=True, order=True)
class Constraint:
    """One opinion equation for :func:`fit_least_squares`.

    ``equation`` is one of ``gamma_mean``, ``gamma_interval``, ``gamma_vco``,
    ``pareto_expected_loss``, ``pareto_expected_quantile``,
    ``pareto_loss_interval``, ``pareto_quantile_interval`` (Gamma family) or
    ``lognormal_mean``, ``lognormal_mean_interval``, ``lognormal_quantile``,
    ``lognormal_quantile_interval`` (Normal family). Interval equations
    take ``a``, ``b`` and target a probability; quantile equations take
    ``q``. Mean-type residuals are relative, probability residuals absolute.
    """

    equation: str
    target: float
    weight: float = 1.0
    a: Optional[float] = None
    b: Optional[float] = None
    q: Optional[float] = None

    def __post_init__(self):
        if self.equation not in _GAMMA_EQ + _NORMAL_EQ:
            raise ValidationError(f"unknown equation {self.equation!r}")
        if not (math.isfinite(self.target) and math.isfinite(self.weight) and self.weight > 0):
            raise ValidationError("target must be finite and weight positive")
        if "interval" in self.equation:
            if self.a is None or self.b is None or not self.a < self.b:
                raise ValidationError(f"{self.equation} needs a < b")
            if not (0.0 < self.target < 1.0):
                raise ValidationError("interval targets are probabilities in (0, 1)")
        elif not self.target > 0:
            raise ValidationError("mean-type targets must be positive")
        if "quantile" in self.equation and not (self.q is not None and 0 < self.q < 1):
            raise ValidationError(f"{self.equation} needs q in (0, 1)")


def _gamma_residual(c: Constraint, alpha, beta, B, L):
    params = GammaParams(alpha, beta, B if B > 0 else None)
    eq = c.equation
    if eq == "gamma_mean":
        return truncated_gamma_mean(params) / c.target - 1.0
    if eq == "gamma_vco":
        return params.vco / c.target - 1.0
    if eq == "gamma_interval":
        return _conditional_mass(alpha, beta, c.a, c.b, B) - c.target
    if eq == "pareto_expected_loss":
        return truncated_gamma_expected_functional(params, "expected_loss", L) / c.target - 1.0
    if eq == "pareto_expected_quantile":
        return truncated_gamma_expected_functional(params, "expected_quantile", L, c.q) / c.target - 1.0
    if eq == "pareto_loss_interval":
        lo, hi = loss_interval_to_xi(c.a, c.b, L, B)
        return _conditional_mass(alpha, beta, lo, hi, B) - c.target
    lo, hi = quantile_interval_to_xi(c.q, c.a, c.b, L, B)
    return _conditional_mass(alpha, beta, lo, hi, B) - c.target


def _normal_residual(c: Constraint, mu0, s0, sigma):
    off = 0.5 * sigma * sigma if c.equation.startswith("lognormal_mean") else sigma * _k.norm_ppf(c.q)
    if c.equation in ("lognormal_mean", "lognormal_quantile"):
        return math.exp(mu0 + off + 0.5 * s0 * s0) / c.target - 1.0
    z_a = (math.log(c.a) - off - mu0) / s0
    z_b = (math.log(c.b) - off - mu0) / s0
    return _normal_interval_mass(z_a, z_b) - c.target


def fit_least_squares(constraints: Sequence[Constraint], family: str = "gamma",
                      lower_bound: float = 0.0, threshold: float = 1.0,
                      sigma: Optional[float] = None) -> FitReport:
    """Weighted nonlinear least squares over (alpha, beta) or (mu0, sigma0).

    Positivity is enforced by optimising log-parameters. Constraints are put
    in a canonical order first, so the result does not depend on the order
    they were given in. With exactly as many consistent equations as
    parameters the residuals vanish; with contradictory equations the
    report carries the compromise residuals.
    """
    cons = sorted(set(constraints))
    if len(cons) < 2:
        raise ValidationError("need at least two distinct constraints")
    B = float(lower_bound)
    if family == "gamma":
        bad = [c.equation for c in cons if c.equation not in _GAMMA_EQ]
        if bad:
            raise ValidationError(f"equations {bad} do not constrain a Gamma prior")

        def resid(x):
            a, b = math.exp(x[0]), math.exp(x[1])
            try:
                return np.array([c.weight * _gamma_residual(c, a, b, B, threshold) for c in cons])
            except (ValidationError, ZeroDivisionError, OverflowError):
                return np.full(len(cons), 1e3)

        means = [c.target for c in cons if c.equation == "gamma_mean"]
        m0 = means[0] if means else max(B, 1.0) * 2.0
        starts = [np.array([math.log(al), math.log(m0 / al)]) for al in (1.0, 10.0, 100.0)]
    elif family == "normal":
        if not (sigma is not None and sigma > 0):
            raise ValidationError("normal family needs the known sigma")
        bad = [c.equation for c in cons if c.equation not in _NORMAL_EQ]
        if bad:
            raise ValidationError(f"equations {bad} do not constrain a Normal prior")

        def resid(x):
            try:
                return np.array([c.weight * _normal_residual(c, x[0], math.exp(x[1]), sigma)
                                 for c in cons])
            except (ValidationError, ZeroDivisionError, OverflowError, ValueError):
                return np.full(len(cons), 1e3)

        pts = [c for c in cons if c.equation in ("lognormal_mean", "lognormal_quantile")]
        c0 = pts[0] if pts else cons[0]
        off = 0.5 * sigma * sigma if c0.equation.startswith("lognormal_mean") else sigma * _k.norm_ppf(c0.q)
        centre = math.log(c0.target) if c0.equation in ("lognormal_mean", "lognormal_quantile") \
            else 0.5 * (math.log(c0.a) + math.log(c0.b))
        starts = [np.array([centre - off, math.log(s)]) for s in (0.05, 0.3, 1.0)]
    else:
        raise ValidationError(f"unknown family {family!r}")

    # numerical rank at the start: two parameters need two independent equations
    jac0 = optimize.approx_fprime(starts[1], resid, 1e-6)
    if np.linalg.matrix_rank(jac0, tol=1e-10) < 2:
        raise ValidationError("constraints do not independently determine both parameters")

    best = None
    total_nfev = 0
    for x0 in starts:
        sol = optimize.least_squares(resid, x0, method="trf", x_scale="jac",
                                     xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
        total_nfev += sol.nfev
        if best is None or sol.cost < best.cost:
            best = sol
    x = best.x
    raw = tuple(float(r) / c.weight for r, c in zip(resid(x), cons))
    if family == "gamma":
        params = GammaParams(math.exp(x[0]), math.exp(x[1]), B if B > 0 else None)
    else:
        params = NormalParams(float(x[0]), math.exp(x[1]))
    rep = FitReport(params, raw, total_nfev, bool(best.status > 0),
                    tuple(c.equation for c in cons), best.message, float(best.cost))
    if not rep.converged:
        raise ConvergenceError(f"least squares did not converge: {best.message}", rep)
    return rep
