"""Prior families: conjugate updates, sampling laws, shrinkage cascade, CAR."""

import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from helpers import (
    car_precision_reference,
    fd_gradient,
    gig_mh_sample,
    gig_moment,
    nig_posterior_reference,
    rel_err,
)
from latentmeasures.priors import (
    CarPrior,
    MgpHyper,
    NigBase,
    draw_mgp_hyper,
    loadings_from_hyper,
    log_jump_prior,
    log_score_prior,
    mgp_expected_loadings,
    nig_posterior,
    sample_atom,
    sample_gig,
    sample_jumps,
    sample_mgp_lambda,
    sample_scores,
    update_depth_factors,
)


class TestNigPosterior:
    def test_empty_data_unchanged(self):
        base = NigBase(mu0=1.5, lambda0=2.0, a=3.0, b=4.0)
        assert nig_posterior(base, []) is base

    def test_observation_at_prior_mean(self):
        """n=1, y=mu0: only lambda and a move."""
        base = NigBase(mu0=1.5, lambda0=2.0, a=3.0, b=4.0)
        post = nig_posterior(base, [1.5])
        assert post.mu0 == 1.5
        assert post.lambda0 == 3.0
        assert post.a == 3.5
        assert post.b == 4.0

    def test_matches_sufficient_stat_reference(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            base = NigBase(
                mu0=float(rng.normal()),
                lambda0=float(rng.uniform(0.1, 5.0)),
                a=float(rng.uniform(0.5, 6.0)),
                b=float(rng.uniform(0.5, 6.0)),
            )
            y = rng.normal(size=int(rng.integers(1, 12)))
            post = nig_posterior(base, y)
            mu, lam, a, b = nig_posterior_reference(base.mu0, base.lambda0, base.a, base.b, y)
            assert post.mu0 == pytest.approx(mu, rel=1e-12)
            assert post.lambda0 == pytest.approx(lam, rel=1e-12)
            assert post.a == pytest.approx(a, rel=1e-12)
            assert post.b == pytest.approx(b, rel=1e-12)

    def test_order_exchangeable(self):
        base = NigBase(mu0=0.3, lambda0=1.1, a=2.0, b=2.0)
        rng = np.random.default_rng(5)
        y = rng.normal(size=9)
        p1 = nig_posterior(base, y)
        p2 = nig_posterior(base, y[::-1].copy())
        assert p1.mu0 == pytest.approx(p2.mu0, abs=1e-12)
        assert p1.b == pytest.approx(p2.b, abs=1e-12)

    def test_posterior_predictive_mean_mc(self):
        """MC through the sigma2 -> mu -> y hierarchy centres on mu0'."""
        rng = np.random.default_rng(77)
        base = NigBase(mu0=0.5, lambda0=2.0, a=3.0, b=2.0)
        post = nig_posterior(base, rng.normal(size=4))
        n = 1_000_000
        sigma2 = post.b / rng.standard_gamma(post.a, size=n)
        mu = post.mu0 + np.sqrt(sigma2 / post.lambda0) * rng.standard_normal(n)
        y = mu + np.sqrt(sigma2) * rng.standard_normal(n)
        se = y.std(ddof=1) / math.sqrt(n)
        assert abs(y.mean() - post.mu0) < 3.0 * se

    def test_validation(self):
        with pytest.raises(ValueError):
            NigBase(mu0=0.0, lambda0=0.0, a=1.0, b=1.0)
        with pytest.raises(ValueError):
            NigBase(mu0=math.nan, lambda0=1.0, a=1.0, b=1.0)


class TestSampleAtom:
    def test_marginals(self):
        """1/sigma2 ~ Gamma(a, rate b); standardized mu is standard normal."""
        rng = np.random.default_rng(9)
        base = NigBase(mu0=-1.0, lambda0=0.7, a=2.5, b=1.3)
        draws = [sample_atom(base, rng) for _ in range(20_000)]
        sigma2 = np.array([d.sigma2 for d in draws])
        mus = np.array([d.mu for d in draws])
        ks1 = stats.kstest(1.0 / sigma2, stats.gamma(base.a, scale=1.0 / base.b).cdf)
        assert ks1.pvalue > 0.01
        z = (mus - base.mu0) * np.sqrt(base.lambda0 / sigma2)
        ks2 = stats.kstest(z, stats.norm.cdf)
        assert ks2.pvalue > 0.01


class TestJumpAndScoreLaws:
    def test_jump_sampler_distribution(self):
        rng = np.random.default_rng(31)
        phi, k = 1.0, 20
        draws = np.concatenate([sample_jumps(phi, k, rng) for _ in range(1000)])
        ks = stats.kstest(draws, stats.beta(phi / k, phi).cdf)
        assert ks.pvalue > 0.01
        assert draws.min() > 0.0 and draws.max() < 1.0

    def test_score_sampler_distribution(self):
        rng = np.random.default_rng(32)
        draws = sample_scores(1.5, 40, 50, rng).ravel()
        ks = stats.kstest(draws, stats.gamma(1.5).cdf)
        assert ks.pvalue > 0.01

    def test_jump_prior_normalized(self):
        """K=1, phi=2: the exact log density integrates to one."""
        t = np.linspace(1e-8, 1.0 - 1e-8, 1_000_001)
        dens = np.exp([log_jump_prior(np.array([x]), 2.0) for x in t[:: len(t) // 2000]])
        # refine: vectorize by direct formula on the full grid
        k, phi = 1, 2.0
        a = phi / k
        from scipy.special import betaln

        logd = (a - 1.0) * np.log(t) + (phi - 1.0) * np.log1p(-t) - betaln(a, phi)
        integral = np.trapezoid(np.exp(logd), t) if hasattr(np, "trapezoid") else np.trapz(np.exp(logd), t)
        assert integral == pytest.approx(1.0, abs=1e-6)
        # spot-check the function against the same formula
        assert log_jump_prior(np.array([0.3]), 2.0) == pytest.approx(
            float((a - 1) * math.log(0.3) + (phi - 1) * math.log(0.7) - betaln(a, phi)),
            abs=1e-12,
        )
        assert dens.size > 0  # evaluated without error across the range

    def test_jump_prior_phi_equals_k_reduction(self):
        """phi=K makes the Beta shape 1: differences depend only on log1p(-J)."""
        phi = 4.0
        j1 = np.array([0.2, 0.5, 0.7, 0.1])
        j2 = np.array([0.3, 0.4, 0.6, 0.2])
        diff = log_jump_prior(j1, phi) - log_jump_prior(j2, phi)
        expected = (phi - 1.0) * (np.log1p(-j1).sum() - np.log1p(-j2).sum())
        assert diff == pytest.approx(expected, abs=1e-12)

    def test_jump_prior_domain(self):
        with pytest.raises(ValueError):
            log_jump_prior(np.array([0.0]), 1.0)
        with pytest.raises(ValueError):
            log_jump_prior(np.array([1.0]), 1.0)
        with pytest.raises(ValueError):
            log_jump_prior(np.array([0.5]), 0.0)

    def test_score_prior_exponential_case(self):
        """phi=1 collapses to -sum(m) plus a vanishing constant."""
        m1 = np.array([[0.5, 2.0], [1.0, 0.1]])
        m2 = np.array([[1.5, 0.7], [0.3, 2.2]])
        diff = log_score_prior(m1, 1.0) - log_score_prior(m2, 1.0)
        assert diff == pytest.approx(float(m2.sum() - m1.sum()), abs=1e-12)

    def test_score_prior_unit_value(self):
        """Ones at phi=2, H=K=1: (2-1)*log 1 - 1 - log Gamma(2) = -1."""
        val = log_score_prior(np.array([[1.0]]), 2.0)
        assert val == pytest.approx(-1.0, abs=1e-14)
        assert gammaln(2.0) == 0.0  # the constant really is zero here

    def test_score_prior_domain(self):
        with pytest.raises(ValueError):
            log_score_prior(np.array([[0.0]]), 1.0)
        with pytest.raises(ValueError):
            log_score_prior(np.array([[1.0]]), -1.0)


class StubOnesRng:
    """Deterministic stand-in whose every gamma request returns ones."""

    def gamma(self, shape, scale=1.0, size=None):
        if size is None:
            return 1.0
        return np.ones(size)


class TestMgpCascade:
    def test_expected_loadings_values(self):
        np.testing.assert_allclose(
            mgp_expected_loadings(2.5, 3.0, 6.0, 3), [1.0, 0.5, 0.25], rtol=1e-14
        )
        np.testing.assert_allclose(
            mgp_expected_loadings(3.0, 3.0, 6.0, 3), [0.75, 0.375, 0.1875], rtol=1e-14
        )

    def test_expected_loadings_domain(self):
        with pytest.raises(ValueError):
            mgp_expected_loadings(1.0, 3.0, 6.0, 2)
        with pytest.raises(ValueError):
            mgp_expected_loadings(3.0, 3.0, 2.0, 2)

    def test_stub_rng_gives_unit_loadings(self):
        lam = sample_mgp_lambda(2.5, 3.0, 6.0, 4, 3, StubOnesRng())
        np.testing.assert_array_equal(lam, np.ones((4, 3)))

    def test_mc_mean_matches_analytic(self):
        rng = np.random.default_rng(100)
        n = 100_000
        draws = np.empty((n, 3))
        for i in range(n):
            draws[i] = sample_mgp_lambda(2.5, 3.0, 6.0, 1, 3, rng)[0]
        target = mgp_expected_loadings(2.5, 3.0, 6.0, 3)
        se = draws.std(axis=0, ddof=1) / math.sqrt(n)
        assert np.all(np.abs(draws.mean(axis=0) - target) < 3.0 * se)

    def test_columns_shrink_stochastically(self):
        rng = np.random.default_rng(101)
        lam = np.vstack([sample_mgp_lambda(2.5, 3.0, 6.0, 1, 4, rng) for _ in range(100_000)])
        means = lam.mean(axis=0)
        assert np.all(np.diff(means) < 0.0)

    def test_draws_positive_finite(self):
        rng = np.random.default_rng(102)
        lam = sample_mgp_lambda(2.5, 3.0, 6.0, 2000, 5, rng)
        assert np.all(lam > 0.0) and np.all(np.isfinite(lam))

    def test_hyper_tau_cumulative(self):
        hyper = MgpHyper(a1=2.0, a2=3.0, nu=6.0, theta=np.array([2.0, 0.5, 3.0]))
        np.testing.assert_allclose(hyper.tau, [2.0, 1.0, 3.0])
        assert hyper.n_factors == 3

    def test_hyper_validation(self):
        with pytest.raises(ValueError):
            MgpHyper(a1=0.0, a2=1.0, nu=1.0, theta=np.array([1.0]))
        with pytest.raises(ValueError):
            MgpHyper(a1=1.0, a2=1.0, nu=1.0, theta=np.array([-1.0]))


def _gig_logpdf_unnorm(x, p, a, b):
    return (p - 1.0) * math.log(x) - a * x - b / x


class TestGig:
    def test_moments_match_bessel(self):
        rng = np.random.default_rng(200)
        for p, a, b in ((-1.3, 1.0, 2.5), (2.0, 0.7, 0.3)):
            draws = np.array([sample_gig(p, a, b, rng) for _ in range(20_000)])
            for order in (1, 2):
                target = gig_moment(p, a, b, order)
                vals = draws**order
                se = vals.std(ddof=1) / math.sqrt(vals.size)
                assert abs(vals.mean() - target) < 4.0 * se, (p, a, b, order)

    def test_matches_mh_oracle(self):
        rng = np.random.default_rng(201)
        p, a, b = -0.8, 1.0, 1.7
        mine = np.array([sample_gig(p, a, b, rng) for _ in range(15_000)])
        other = gig_mh_sample(p, a, b, 15_000, np.random.default_rng(202))
        se = math.hypot(
            mine.std(ddof=1) / math.sqrt(mine.size),
            # MH draws are autocorrelated; inflate their SE contribution
            3.0 * other.std(ddof=1) / math.sqrt(other.size),
        )
        assert abs(mine.mean() - other.mean()) < 4.0 * se

    def test_b_zero_degenerates_to_gamma(self):
        rng = np.random.default_rng(203)
        draws = np.array([sample_gig(1.8, 2.0, 0.0, rng) for _ in range(20_000)])
        ks = stats.kstest(draws, stats.gamma(1.8, scale=0.5).cdf)
        assert ks.pvalue > 0.01

    def test_domain(self):
        rng = np.random.default_rng(204)
        with pytest.raises(ValueError):
            sample_gig(1.0, 0.0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_gig(-1.0, 1.0, 0.0, rng)


class TestDepthFactorUpdate:
    @staticmethod
    def _joint_log(theta, lam, a1, a2, nu):
        """Joint of depth factors and loadings, assembled from first principles."""
        H = theta.size
        tau = np.cumprod(theta)
        val = (a1 - 1.0) * math.log(theta[0]) - theta[0]
        for ell in range(1, H):
            val += (a2 - 1.0) * math.log(theta[ell]) - theta[ell]
        half = nu / 2.0
        for h in range(H):
            phi = 1.0 / (lam[:, h] * tau[h])
            # Gamma(nu/2, rate nu/2) density of phi, with the phi -> lambda Jacobian
            val += float(
                np.sum(
                    (half - 1.0) * np.log(phi)
                    - half * phi
                    + np.log(phi / lam[:, h])
                )
            )
        return val

    def test_conditional_is_the_stated_gig(self):
        """Joint-density ratios in one coordinate match the GIG the sweep samples."""
        rng = np.random.default_rng(300)
        a1, a2, nu = 2.5, 3.0, 6.0
        g, H = 4, 3
        lam = rng.uniform(0.3, 2.0, size=(g, H))
        theta = rng.uniform(0.5, 2.0, size=H)
        half = nu / 2.0
        inv_cols = (1.0 / lam).sum(axis=0)
        for ell in range(H):
            tau = np.cumprod(theta)
            tau_wo = tau[ell:] / theta[ell]
            p_ell = (a1 if ell == 0 else a2) - half * g * (H - ell)
            c_ell = half * float(np.sum(inv_cols[ell:] / tau_wo))
            for cand in (0.4, 1.3):
                t_new = theta.copy()
                t_new[ell] = cand
                lhs = self._joint_log(t_new, lam, a1, a2, nu) - self._joint_log(
                    theta, lam, a1, a2, nu
                )
                rhs = _gig_logpdf_unnorm(cand, p_ell, 1.0, c_ell) - _gig_logpdf_unnorm(
                    theta[ell], p_ell, 1.0, c_ell
                )
                assert lhs == pytest.approx(rhs, abs=1e-9), ell

    def test_single_column_stationary_moments(self):
        """H=1 sweep moments agree with direct quadrature of the conditional."""
        rng = np.random.default_rng(301)
        a1, a2, nu = 2.5, 3.0, 6.0
        lam = rng.uniform(0.5, 1.5, size=(3, 1))
        hyper = draw_mgp_hyper(a1, a2, nu, 3, 1, rng)
        kept = []
        for _ in range(4000):
            hyper = update_depth_factors(lam, hyper, rng)
            kept.append(hyper.theta[0])
        kept = np.array(kept[500:])

        half = nu / 2.0
        p0 = a1 - half * 3
        c0 = half * float((1.0 / lam).sum())
        t = np.linspace(1e-6, 60.0, 400_001)
        logd = (p0 - 1.0) * np.log(t) - t - c0 / t
        dens = np.exp(logd - logd.max())
        z = np.trapezoid(dens, t)
        mean = np.trapezoid(t * dens, t) / z
        sec = np.trapezoid(t * t * dens, t) / z
        sd = math.sqrt(sec - mean * mean)
        # Draws from the sweep are iid given fixed loadings (the conditional
        # does not depend on the previous theta), so plain SE applies.
        se = sd / math.sqrt(kept.size)
        assert abs(kept.mean() - mean) < 4.0 * se

    def test_validation(self):
        rng = np.random.default_rng(302)
        hyper = draw_mgp_hyper(2.5, 3.0, 6.0, 2, 2, rng)
        with pytest.raises(ValueError):
            update_depth_factors(np.ones((2, 3)), hyper, rng)
        with pytest.raises(ValueError):
            update_depth_factors(np.zeros((2, 2)), hyper, rng)
        with pytest.raises(ValueError):
            loadings_from_hyper(MgpHyper(a1=1.0, a2=1.0, nu=1.0, theta=np.array([1.0])))


class TestCarPrior:
    def test_two_node_path_example(self):
        """tau=1, rho=0.5 on an edge: precision and quadratic form by hand."""
        W = np.array([[0.0, 1.0], [1.0, 0.0]])
        prior = CarPrior(W, mu=np.zeros(2), tau=1.0, rho=0.5)
        np.testing.assert_allclose(prior.precision, [[1.0, -0.5], [-0.5, 1.0]])
        np.testing.assert_allclose(
            prior.precision, car_precision_reference(W, 1.0, 0.5)
        )
        at_mode, grad0 = prior.log_density(np.zeros(2))
        shifted, _ = prior.log_density(np.array([1.0, 0.0]))
        assert shifted - at_mode == pytest.approx(-0.5, abs=1e-12)
        np.testing.assert_allclose(grad0, 0.0, atol=1e-15)

    def test_matches_full_multivariate_normal(self):
        rng = np.random.default_rng(400)
        W = np.zeros((5, 5))
        for i, j in ((0, 1), (1, 2), (2, 3), (3, 4), (4, 0)):
            W[i, j] = W[j, i] = 1.0
        mu = rng.normal(size=5)
        prior = CarPrior(W, mu=mu, tau=2.5, rho=0.95)
        cov = np.linalg.inv(prior.precision)
        ref = stats.multivariate_normal(mean=mu, cov=cov)
        for _ in range(5):
            x = rng.normal(size=5)
            val, grad = prior.log_density(x)
            assert val == pytest.approx(ref.logpdf(x), rel=1e-10)
            assert rel_err(grad, fd_gradient(lambda z: prior.log_density(z)[0], x)) < 1e-5

    def test_translation_invariance(self):
        W = np.array([[0.0, 1.0], [1.0, 0.0]])
        x = np.array([0.3, -0.9])
        a = CarPrior(W, mu=np.array([0.1, 0.2]), tau=1.5, rho=0.4)
        b = CarPrior(W, mu=np.array([1.1, 1.2]), tau=1.5, rho=0.4)
        assert a.log_density(x)[0] == pytest.approx(b.log_density(x + 1.0)[0], abs=1e-12)

    def test_sampler_moments(self):
        rng = np.random.default_rng(401)
        W = np.zeros((4, 4))
        for i, j in ((0, 1), (1, 2), (2, 3)):
            W[i, j] = W[j, i] = 1.0
        mu = np.array([0.5, -0.5, 1.0, 0.0])
        prior = CarPrior(W, mu=mu, tau=2.0, rho=0.9)
        draws = np.array([prior.sample(rng) for _ in range(50_000)])
        cov = np.linalg.inv(prior.precision)
        se = np.sqrt(np.diag(cov) / draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - mu) < 4.0 * se)
        np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.02)

    def test_construction_validation(self):
        ok = np.array([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            CarPrior(np.array([[0.0, 1.0], [0.0, 0.0]]), mu=0.0)  # asymmetric
        with pytest.raises(ValueError):
            CarPrior(np.array([[1.0, 1.0], [1.0, 0.0]]), mu=0.0)  # self-loop
        with pytest.raises(ValueError):
            CarPrior(np.array([[0.0, 2.0], [2.0, 0.0]]), mu=0.0)  # non-binary
        with pytest.raises(ValueError):
            CarPrior(ok, mu=0.0, tau=0.0)
        with pytest.raises(ValueError):
            CarPrior(ok, mu=0.0, rho=0.0)
        with pytest.raises(ValueError):
            CarPrior(ok, mu=0.0, rho=1.0)
        with pytest.raises(ValueError):
            CarPrior(np.zeros((2, 2)), mu=0.0)  # no edges: singular precision
