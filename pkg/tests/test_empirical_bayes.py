"""Multi-bank Gamma-prior estimation: likelihood, moments, MLE and per-bank posteriors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, special, stats

from opbayes.distributions import GammaParams, negbin_pmf
from opbayes.conjugate import poisson_gamma_update
from opbayes.empirical_bayes import (BankSeries, CountPanel, bank_posterior, fit_mle, fit_mom,
                                     neg_log_likelihood, neg_log_likelihood_grad,
                                     predictive_counts, simulate_panel)
from opbayes.errors import ValidationError


def _small_panel():
    return CountPanel.from_records([
        ("a", 1, 0, 1.0), ("a", 2, 2, 1.5),
        ("b", 1, 1, 0.5), ("b", 2, 0, 0.7), ("b", 3, 3, 2.0),
        ("c", 1, 5, 1.2),
        ("d", 1, 0, 0.9), ("d", 2, 1, 1.1),
    ])


def _quad_loglik(alpha, beta, bank):
    """log of int prod_k Pois(N_k; lam V_k) Gamma(lam; alpha, beta) dlam, by quadrature."""
    n, v = bank.counts, bank.exposures

    def integrand(lam):
        if lam <= 0:
            return 0.0
        return math.exp(np.sum(stats.poisson.logpmf(n, lam * v))
                        + stats.gamma.logpdf(lam, alpha, scale=beta))

    hi = stats.gamma.ppf(1 - 1e-14, alpha + n.sum(), scale=beta / (1 + beta * v.sum())) * 3
    val, _ = integrate.quad(integrand, 0, hi, epsabs=0, epsrel=1e-12, limit=400)
    return math.log(val)


def _free_terms(bank):
    n, v = bank.counts, bank.exposures
    return float(np.sum(n * np.log(v) - special.gammaln(n + 1)))


class TestLikelihood:
    @pytest.mark.parametrize("alpha,beta", [(0.7, 2.0), (3.407, 0.147), (40.0, 0.01)])
    def test_matches_quadrature(self, alpha, beta):
        panel = _small_panel()
        ref = sum(_quad_loglik(alpha, beta, b) - _free_terms(b) for b in panel.banks)
        np.testing.assert_allclose(-neg_log_likelihood(alpha, beta, panel), ref, rtol=1e-9)

    def test_tiny_beta_is_stable(self):
        panel = _small_panel()
        v = -neg_log_likelihood(1e6, 1e-12, panel)
        assert math.isfinite(v)

    @pytest.mark.parametrize("alpha,beta", [(0.7, 2.0), (3.407, 0.147), (40.0, 0.01)])
    def test_gradient_matches_finite_difference(self, alpha, beta):
        panel = _small_panel()
        g = neg_log_likelihood_grad(alpha, beta, panel)
        fd = optimize.approx_fprime([alpha, beta], lambda x: neg_log_likelihood(x[0], x[1], panel),
                                    [1e-7 * alpha, 1e-7 * beta])
        np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)

    def test_rejects_bad_params(self):
        with pytest.raises(ValidationError):
            neg_log_likelihood(-1.0, 1.0, _small_panel())


class TestPanel:
    def test_from_records_sorts_years(self):
        p = CountPanel.from_records([("x", 2, 1, 1.0), ("x", 1, 3, 2.0), ("y", 1, 0, 1.0)])
        assert [b.bank_id for b in p.banks] == ["x", "y"]
        np.testing.assert_array_equal(p.banks[0].counts, [3, 1])
        n, v = p.totals()
        np.testing.assert_array_equal(n, [4, 0])
        np.testing.assert_array_equal(v, [3, 1])

    def test_invalid_rows(self):
        with pytest.raises(ValidationError):
            BankSeries("x", [1], [-1], [1.0])
        with pytest.raises(ValidationError):
            BankSeries("x", [1], [1], [0.0])
        with pytest.raises(ValidationError):
            BankSeries("x", [1, 2], [1], [1.0])

    def test_prescaled_needs_whole_counts(self):
        p = CountPanel([BankSeries("x", [1], [0.3], [1.0])], prescaled=True)
        with pytest.raises(ValidationError):
            p.totals()


class TestMethodOfMoments:
    def test_hand_formula(self):
        panel = _small_panel()
        lam = np.array([np.mean(b.counts / b.exposures) for b in panel.banks])
        noise = sum(np.sum(1 / b.exposures) / b.n_years ** 2 for b in panel.banks)
        s2 = lam.var(ddof=1) - lam.mean() / len(lam) * noise
        est = fit_mom(panel)
        np.testing.assert_allclose(est.lambda0, lam.mean(), rtol=1e-14)
        np.testing.assert_allclose(est.sigma0_sq_raw, s2, rtol=1e-12)
        np.testing.assert_allclose(est.alpha * est.beta, est.lambda0, rtol=1e-12)
        np.testing.assert_allclose(est.alpha * est.beta ** 2, est.sigma0_sq, rtol=1e-12)

    def test_clamps_to_homogeneous(self):
        # identical frequencies everywhere: sample variance zero, noise term positive
        panel = CountPanel.from_records([(j, k, 1, 1.0) for j in range(4) for k in range(3)])
        est = fit_mom(panel)
        assert est.homogeneous and est.alpha is None and est.sigma0_sq == 0.0
        assert est.sigma0_sq_raw < 0
        with pytest.raises(ValidationError):
            est.prior

    def test_prescaled_matches_raw(self):
        rng = np.random.default_rng(4)
        raw = simulate_panel(2.0, 0.3, rng.uniform(0.5, 2.0, (30, 4)), rng)
        scaled = CountPanel([BankSeries(b.bank_id, b.years, b.counts / b.exposures, b.exposures)
                             for b in raw.banks], prescaled=True)
        a, b = fit_mom(raw), fit_mom(scaled)
        np.testing.assert_allclose([a.lambda0, a.sigma0_sq_raw], [b.lambda0, b.sigma0_sq_raw],
                                   rtol=1e-12)
        m1, m2 = fit_mle(raw), fit_mle(scaled, start=(a.alpha, a.beta))
        np.testing.assert_allclose([m1.alpha, m1.beta], [m2.alpha, m2.beta], rtol=1e-6)

    def test_one_over_k_variant_is_biased_upward(self):
        # with K_j > 1, sum 1/V / K_j subtracts more noise than sum 1/V / K_j^2
        rng = np.random.default_rng(11)
        raw, alt = [], []
        for _ in range(300):
            p = simulate_panel(3.407, 0.147, rng.uniform(0.5, 2.0, (50, 5)), rng)
            raw.append(fit_mom(p).sigma0_sq_raw)
            alt.append(fit_mom(p, inverse_k_power=1).sigma0_sq_raw)
        assert np.mean(alt) < np.mean(raw)
        se = np.std(raw, ddof=1) / math.sqrt(len(raw))
        assert abs(np.mean(raw) - 3.407 * 0.147 ** 2) <= 4 * se

    def test_needs_two_banks(self):
        with pytest.raises(ValidationError):
            fit_mom(CountPanel.from_records([("a", 1, 1, 1.0)]))


class TestMaximumLikelihood:
    def test_recovers_parameters(self):
        rng = np.random.default_rng(7)
        panel = simulate_panel(3.407, 0.147, np.ones((200, 10)), rng)
        est = fit_mle(panel)
        assert not est.boundary
        assert est.grad_norm <= 1e-6
        # accuracy is limited by 200 draws of lambda_j: SE(lambda0) ~ 0.27 / sqrt(200)
        assert abs(est.lambda0 - 0.5008) <= 4 * math.sqrt(3.407 * 0.147 ** 2 / 200)

    def test_is_a_maximum(self):
        panel = _small_panel()
        est = fit_mle(panel)
        f0 = neg_log_likelihood(est.alpha, est.beta, panel)
        for da, db in [(1.01, 1), (0.99, 1), (1, 1.01), (1, 0.99), (1.01, 0.99)]:
            assert neg_log_likelihood(est.alpha * da, est.beta * db, panel) >= f0 - 1e-12

    def test_agrees_with_direct_scipy_search(self):
        panel = _small_panel()
        est = fit_mle(panel)
        ref = optimize.minimize(lambda x: neg_log_likelihood(math.exp(x[0]), math.exp(x[1]), panel),
                                [0.0, 0.0], method="Nelder-Mead",
                                options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 10000})
        np.testing.assert_allclose([est.alpha, est.beta], np.exp(ref.x), rtol=1e-4)

    def test_all_zero_counts_is_boundary(self):
        panel = CountPanel.from_records([(j, 1, 0, 1.0) for j in range(5)])
        est = fit_mle(panel)
        assert est.boundary and "no events" in est.message

    def test_no_overdispersion_is_boundary(self):
        panel = CountPanel.from_records([(j, k, 2, 1.0) for j in range(6) for k in range(4)])
        est = fit_mle(panel)
        assert est.boundary and est.homogeneous
        np.testing.assert_allclose(est.lambda0, 2.0, rtol=1e-3)


class TestBankPosterior:
    def test_worked_values(self):
        bank = BankSeries("x", [1, 2], [1, 2], [0.5, 1.5])
        post = bank_posterior((1.0, 1.0), bank)
        np.testing.assert_allclose([post.alpha, post.beta], [4.0, 1 / 3], rtol=1e-15)

    def test_reduces_to_poisson_gamma_update_for_unit_exposure(self):
        counts = [0, 2, 1, 0, 3]
        bank = BankSeries("x", range(5), counts, np.ones(5))
        prior = GammaParams(3.407, 0.147)
        a = bank_posterior(prior, bank)
        b = poisson_gamma_update(prior, counts).params
        np.testing.assert_allclose([a.alpha, a.beta], [b.alpha, b.beta], rtol=1e-14)

    def test_prescaled(self):
        bank = BankSeries("x", [1, 2], [2.0, 1.0], [0.5, 2.0])
        post = bank_posterior((1.0, 1.0), bank, prescaled=True)
        np.testing.assert_allclose(post.alpha, 4.0)

    def test_predictive(self):
        nb = predictive_counts(GammaParams(1.0, 1.0))
        assert nb.r == 1.0 and nb.p == 0.5
        np.testing.assert_allclose(negbin_pmf(np.arange(5), nb), 0.5 ** np.arange(1, 6), rtol=1e-14)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.1, 50), st.floats(1e-3, 10), st.floats(0.1, 10))
    def test_predictive_mean_identity(self, alpha, beta, v):
        nb = predictive_counts(GammaParams(alpha, beta), v)
        np.testing.assert_allclose(nb.mean, alpha * beta * v, rtol=1e-10)
        np.testing.assert_allclose(nb.variance, alpha * beta * v * (1 + beta * v), rtol=1e-10)


def test_simulated_frequencies_scale_with_exposure():
    # N / V at exposure 4 has the same lambda-mixture mean as at exposure 1
    rng = np.random.default_rng(3)
    p1 = simulate_panel(2.0, 0.5, np.ones((4000, 1)), rng)
    p4 = simulate_panel(2.0, 0.5, 4 * np.ones((4000, 1)), rng)
    f1 = np.array([b.counts[0] for b in p1.banks])
    f4 = np.array([b.counts[0] / 4 for b in p4.banks])
    np.testing.assert_allclose(f1.mean(), 1.0, atol=4 * f1.std() / 63)
    np.testing.assert_allclose(f4.mean(), 1.0, atol=4 * f4.std() / 63)
    # less Poisson noise at larger exposure: variance 2*0.25 + 1/V
    assert f4.var() < f1.var()
