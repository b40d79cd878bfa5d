"""Conjugate Bayesian models for operational-risk frequency, severity and capital."""

from ._backend import BACKEND
from .errors import (ConvergenceError, InfeasibleError, InfiniteMeanWarning, OpBayesError,
                     ValidationError)
from .distributions import (GammaParams, LogNormalParams, NegBinParams, NormalInvChiSqParams,
                            NormalParams, ParetoParams, PoissonParams, RngStream, negbin_pmf,
                            sample)
from .conjugate import (lognormal_joint_update, lognormal_mu_update, pareto_xi_update,
                        poisson_gamma_update, truncate)
from .elicitation import (Constraint, ExpertOpinion, FitReport, fit_least_squares,
                          fit_lognormal_mu_prior_from_mean, fit_pareto_gamma, fit_poisson_gamma)
from .empirical_bayes import (BankSeries, CountPanel, HyperEstimate, bank_posterior, fit_mle,
                              fit_mom, predictive_counts)
from .capital import (CapitalResult, CopulaSpec, FloorSpec, JointLogNormalSeverity,
                      LogNormalSeverity, ParetoSeverity, RiskCellModel, run_copula,
                      run_independent)

__version__ = "0.1.0"
