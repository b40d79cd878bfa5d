"""Monte Carlo annual-loss distributions and quantile capital.

Each replication draws every cell's risk profile (frequency rate and
severity parameters) once from its posterior, then a Poisson number of
severities given that profile; the annual loss is their sum. Profiles
are drawn independently or joined by a Gaussian copula. The hot loop
runs in the compiled kernels (or their pure-Python twin), one
counter-based random stream per replication, so results depend only on
(seed, K, models) and not on the number of worker threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ._backend import kernels as _k
from .conjugate import NormalMuPosterior, ParetoXiPosterior
from .distributions import (GammaParams, NormalInvChiSqParams, NormalParams,
                            RngStream, gamma_cdf)
from .errors import ValidationError

DEFAULT_SAMPLES = 100_000
DEFAULT_QUANTILE = 0.999

FREQ, SEV = 0, 1


@dataclass(frozen=True)
class FloorSpec:
    """Lower bound on the coefficient of variation of a sampled risk profile."""

    value: float = 0.05
    kind: str = "vco"

    def __post_init__(self):
        if self.kind != "vco":
            raise ValidationError(f"unsupported floor kind {self.kind!r}")
        if not (math.isfinite(self.value) and self.value > 0):
            raise ValidationError("floor value must be positive")


@dataclass(frozen=True)
class LogNormalSeverity:
    """LogNormal(mu, sigma) severities with known sigma; ``mu`` is a number
    (fixed) or a Normal posterior."""

    mu: Union[float, NormalParams, NormalMuPosterior]
    sigma: float

    def __post_init__(self):
        if isinstance(self.mu, NormalMuPosterior):
            object.__setattr__(self, "mu", self.mu.params)
        if isinstance(self.mu, NormalParams) and self.mu.is_truncated:
            raise ValidationError("truncated Normal posteriors for mu are not supported here")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValidationError("sigma must be positive")


@dataclass(frozen=True)
class JointLogNormalSeverity:
    """LogNormal severities with a Normal-inverse-chi-squared posterior on (mu, sigma^2)."""

    params: NormalInvChiSqParams


@dataclass(frozen=True)
class ParetoSeverity:
    """Pareto severities above ``threshold``; ``xi`` is fixed or Gamma-distributed."""

    xi: Union[float, GammaParams, ParetoXiPosterior]
    threshold: float

    def __post_init__(self):
        if isinstance(self.xi, ParetoXiPosterior):
            object.__setattr__(self, "xi", self.xi.params)
        if not (math.isfinite(self.threshold) and self.threshold > 0):
            raise ValidationError("threshold must be positive")
        if not isinstance(self.xi, GammaParams) and not self.xi > 0:
            raise ValidationError("xi must be positive")

    @property
    def prob_infinite_mean(self):
        """Posterior probability that xi <= 1 (infinite severity mean)."""
        if not isinstance(self.xi, GammaParams):
            return 1.0 if self.xi <= 1.0 else 0.0
        lo, _ = self.xi.bounds
        if lo > 1.0:
            return 0.0
        return float(gamma_cdf(1.0, self.xi))


Severity = Union[LogNormalSeverity, JointLogNormalSeverity, ParetoSeverity]


@dataclass(frozen=True)
class RiskCellModel:
    """One risk cell: frequency posterior (or fixed rate), severity model,
    exposure multiplying the rate, and an optional variance floor."""

    cell_id: str
    frequency: Union[float, GammaParams]
    severity: Severity
    exposure: float = 1.0
    variance_floor: Optional[FloorSpec] = None
    acknowledge_infinite_mean: bool = False

    def __post_init__(self):
        if not isinstance(self.frequency, GammaParams):
            if not (math.isfinite(self.frequency) and self.frequency >= 0):
                raise ValidationError("fixed frequency rate must be non-negative")
        if not (math.isfinite(self.exposure) and self.exposure > 0):
            raise ValidationError("exposure must be positive")
        if (isinstance(self.severity, ParetoSeverity) and self.severity.prob_infinite_mean > 0
                and not self.acknowledge_infinite_mean):
            raise ValidationError(
                f"cell {self.cell_id}: Pareto tail index has posterior mass "
                f"{self.severity.prob_infinite_mean:.3g} on xi <= 1 (infinite mean); truncate "
                "the posterior above 1 or set acknowledge_infinite_mean")

    @property
    def infinite_mean(self):
        return isinstance(self.severity, ParetoSeverity) and self.severity.prob_infinite_mean > 0


@dataclass(frozen=True)
class CopulaSpec:
    """Gaussian copula over selected profile coordinates.

    ``coupling`` lists ``(cell_index, "frequency" | "severity")`` pairs, one
    per row/column of ``correlation``. A joint (mu, sigma^2) severity couples
    through mu; sigma^2 is then drawn from its conditional distribution.
    """

    kind: str = "independent"
    correlation: Optional[np.ndarray] = None
    coupling: Tuple[Tuple[int, str], ...] = ()

    def __post_init__(self):
        if self.kind not in ("independent", "gaussian"):
            raise ValidationError(f"unknown copula kind {self.kind!r}")
        if self.kind == "independent":
            return
        r = np.asarray(self.correlation, dtype=float)
        d = len(self.coupling)
        if r.shape != (d, d):
            raise ValidationError(f"correlation is {r.shape}, coupling lists {d} coordinates")
        if not np.all(np.isfinite(r)):
            raise ValidationError("correlation has non-finite entries")
        if not np.allclose(r, r.T, rtol=0, atol=1e-12):
            raise ValidationError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(r), 1.0, rtol=0, atol=1e-12):
            raise ValidationError("correlation matrix needs a unit diagonal")
        smallest = float(np.linalg.eigvalsh(r).min()) if d else 0.0
        if smallest < -1e-10:
            raise ValidationError(
                f"correlation matrix is not positive semidefinite (smallest eigenvalue {smallest:.3e})")
        coupling = tuple((int(c), str(kind)) for c, kind in self.coupling)
        for _, kind in coupling:
            if kind not in ("frequency", "severity"):
                raise ValidationError(f"unknown coupling coordinate {kind!r}")
        if len(set(coupling)) != len(coupling):
            raise ValidationError("a profile coordinate is coupled twice")
        object.__setattr__(self, "correlation", r)
        object.__setattr__(self, "coupling", coupling)

    @classmethod
    def gaussian(cls, correlation, coupling):
        return cls("gaussian", np.asarray(correlation, dtype=float), tuple(coupling))

    def factor(self):
        """Matrix A with A A^T = correlation: Cholesky, or a symmetric
        eigen-factor when the matrix is singular (e.g. perfect correlation)."""
        r = self.correlation
        try:
            return np.linalg.cholesky(r)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(r)
            return np.ascontiguousarray(v * np.sqrt(np.clip(w, 0.0, None)))


@dataclass
class CapitalResult:
    per_cell_samples: np.ndarray  # (K, n_cells)
    total_samples: np.ndarray
    per_cell_quantile: np.ndarray
    total_quantile: float
    sum_of_quantiles: float
    quantile: float
    seed: int
    n_samples: int
    cell_ids: List[str] = field(default_factory=list)
    infinite_mean_cells: List[str] = field(default_factory=list)
    interpolated: bool = False

    @property
    def diversification(self):
        """sum_of_quantiles - total_quantile."""
        return self.sum_of_quantiles - self.total_quantile

    def summary(self):
        means_reliable = not self.infinite_mean_cells
        return {
            "quantile": self.quantile,
            "seed": self.seed,
            "samples": self.n_samples,
            "estimator": "interpolated" if self.interpolated else "order_statistic",
            "cells": [
                {"cell_id": cid, "quantile_value": float(q), "mean": float(m)}
                for cid, q, m in zip(self.cell_ids, self.per_cell_quantile,
                                     self.per_cell_samples.mean(axis=0))
            ],
            "total_quantile": float(self.total_quantile),
            "sum_of_quantiles": float(self.sum_of_quantiles),
            "total_mean": float(self.total_samples.mean()),
            "means_reliable": means_reliable,
            "infinite_mean_cells": list(self.infinite_mean_cells),
        }


# -- variance floor -----------------------------------------------------------

def apply_variance_floor(posterior, floor: Optional[FloorSpec]):
    """Raise the spread of ``posterior`` so that its Vco is at least
    ``floor.value``, keeping the mean.

    Gamma: alpha = 1/v^2, beta = mean/alpha. Normal: sigma = v |mu|.
    Truncated Gamma posteriors are adjusted through their untruncated
    parent (same bounds), which keeps the parent's mean, not the truncated one.
    """
    if floor is None:
        return posterior
    v = floor.value
    if isinstance(posterior, GammaParams):
        parent = posterior.untruncated()
        if 1.0 / math.sqrt(parent.alpha) >= v:
            return posterior
        mean = parent.alpha * parent.beta
        alpha = 1.0 / (v * v)
        return GammaParams(alpha, mean / alpha, posterior.lower_trunc, posterior.upper_trunc)
    if isinstance(posterior, NormalParams):
        if posterior.mu == 0.0 or posterior.sigma / abs(posterior.mu) >= v:
            return posterior
        return replace(posterior, sigma=v * abs(posterior.mu))
    raise ValidationError(f"no variance floor for {type(posterior).__name__}")


def _floored(model: RiskCellModel):
    fl = model.variance_floor
    if fl is None:
        return model
    freq = model.frequency
    if isinstance(freq, GammaParams):
        freq = apply_variance_floor(freq, fl)
    sev = model.severity
    if isinstance(sev, LogNormalSeverity) and isinstance(sev.mu, NormalParams):
        sev = LogNormalSeverity(apply_variance_floor(sev.mu, fl), sev.sigma)
    elif isinstance(sev, ParetoSeverity) and isinstance(sev.xi, GammaParams):
        sev = ParetoSeverity(apply_variance_floor(sev.xi, fl), sev.threshold)
    return replace(model, frequency=freq, severity=sev)


# -- kernel rows -----------------------------------------------------------------

def model_row(model: RiskCellModel) -> np.ndarray:
    """Encode a cell as one row of the kernel parameter table."""
    model = _floored(model)
    row = np.zeros(_k.ROW_WIDTH)
    row[11] = math.inf
    f = model.frequency
    if not isinstance(f, GammaParams):
        row[0], row[1] = 0.0, float(f)
    elif not f.is_truncated:
        row[0], row[1], row[2] = 1.0, f.alpha, f.beta
    else:
        lo, hi = f.bounds
        row[0], row[1], row[2], row[3], row[11] = 2.0, f.alpha, f.beta, lo, hi
    row[4] = model.exposure
    s = model.severity
    if isinstance(s, LogNormalSeverity):
        if isinstance(s.mu, NormalParams):
            row[5:9] = (1.0, s.mu.mu, s.mu.sigma, s.sigma)
        else:
            row[5:8] = (0.0, float(s.mu), s.sigma)
    elif isinstance(s, JointLogNormalSeverity):
        p = s.params
        row[5:10] = (2.0, p.nu, p.beta, p.theta, p.phi)
    elif isinstance(s, ParetoSeverity):
        row[10] = s.threshold
        if not isinstance(s.xi, GammaParams):
            row[5:7] = (3.0, float(s.xi))
        elif not s.xi.is_truncated:
            row[5:8] = (4.0, s.xi.alpha, s.xi.beta)
        else:
            lo, hi = s.xi.bounds
            row[5:10] = (5.0, s.xi.alpha, s.xi.beta, lo, hi)
    else:
        raise ValidationError(f"unknown severity model {type(s).__name__}")
    return row


def _coupling_arrays(models, copula: CopulaSpec):
    cells, kinds = [], []
    for cell, kind in copula.coupling:
        if not 0 <= cell < len(models):
            raise ValidationError(f"coupling refers to cell {cell}, only {len(models)} cells")
        m = models[cell]
        if kind == "frequency":
            if not isinstance(m.frequency, GammaParams):
                raise ValidationError(f"cell {m.cell_id}: fixed frequency cannot be coupled")
            kinds.append(FREQ)
        else:
            s = m.severity
            fixed = ((isinstance(s, LogNormalSeverity) and not isinstance(s.mu, NormalParams))
                     or (isinstance(s, ParetoSeverity) and not isinstance(s.xi, GammaParams)))
            if fixed:
                raise ValidationError(f"cell {m.cell_id}: fixed severity cannot be coupled")
            kinds.append(SEV)
        cells.append(cell)
    return np.array(cells, dtype=np.int_), np.array(kinds, dtype=np.int_)


# -- simulation ------------------------------------------------------------------

def simulate_cell_year(model: RiskCellModel, rng: RngStream) -> float:
    """One annual loss: one profile draw for the year, then N ~ Poisson(lambda V)
    severities summed (0 when N = 0). Advances ``rng``."""
    loss, rng.counter = _k.cell_year(model_row(model), rng.key, rng.counter, -1.0, -1.0)
    return loss


def empirical_quantile(samples, q: float, interpolate: bool = False) -> float:
    """Order statistic of rank ceil(q K) (1-based) of the sorted sample.

    With ``interpolate`` the linearly interpolated sample quantile is used.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValidationError("empty sample")
    if not 0.0 < q < 1.0:
        raise ValidationError("quantile level must lie in (0, 1)")
    if interpolate:
        return float(np.quantile(x, q))
    # rounding guards against q*K landing a hair above an integer
    rank = max(1, math.ceil(round(q * x.size, 9)))
    return float(np.partition(x, rank - 1)[rank - 1])


def capital_sum_of_quantiles(result: CapitalResult) -> float:
    """Sum of per-cell quantiles (the comonotone aggregate)."""
    return float(np.sum(result.per_cell_quantile))


def _run(models, K, seed, factor, cells, kinds, workers, quantile, interpolate):
    models = list(models)
    if not models:
        raise ValidationError("no risk cells")
    if int(K) < 1:
        raise ValidationError("number of replications must be at least 1")
    if not 0 <= int(seed) < 2 ** 64:
        raise ValidationError("seed must be a 64-bit unsigned integer")
    ids = [m.cell_id for m in models]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate cell ids")
    rows = np.vstack([model_row(m) for m in models])
    samples = _k.simulate(rows, int(K), int(seed), factor, cells, kinds, int(workers))
    total = samples.sum(axis=1)
    per_q = np.array([empirical_quantile(samples[:, j], quantile, interpolate)
                      for j in range(len(models))])
    result = CapitalResult(samples, total, per_q,
                           empirical_quantile(total, quantile, interpolate),
                           0.0, quantile, int(seed), int(K), ids,
                           [m.cell_id for m in models if m.infinite_mean], interpolate)
    result.sum_of_quantiles = capital_sum_of_quantiles(result)
    return result


def run_independent(models: Sequence[RiskCellModel], K: int = DEFAULT_SAMPLES, seed: int = 0,
                    workers: int = 1, quantile: float = DEFAULT_QUANTILE,
                    interpolate: bool = False) -> CapitalResult:
    """K replications with all risk profiles drawn independently."""
    empty = np.zeros((0, 0))
    none = np.zeros(0, dtype=np.int_)
    return _run(models, K, seed, empty, none, none, workers, quantile, interpolate)


def run_copula(models: Sequence[RiskCellModel], copula: CopulaSpec, K: int = DEFAULT_SAMPLES,
               seed: int = 0, workers: int = 1, quantile: float = DEFAULT_QUANTILE,
               interpolate: bool = False) -> CapitalResult:
    """K replications with the coupled profile coordinates joined by ``copula``;
    each coupled profile is the inverse posterior CDF of a copula uniform."""
    if copula.kind == "independent" or not copula.coupling:
        return run_independent(models, K, seed, workers, quantile, interpolate)
    models = list(models)
    cells, kinds = _coupling_arrays(models, copula)
    return _run(models, K, seed, copula.factor(), cells, kinds, workers, quantile, interpolate)
