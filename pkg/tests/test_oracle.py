"""Oracle exactness: mixture evidence, conjugate posteriors, quadrature checks."""

import numpy as np
import pytest

from revae.oracle import (
    FullGaussian,
    LinearGaussianOracle,
    OracleAdapter,
    SingularCovariance,
)
from revae.tensor import Tensor


def single_gaussian_oracle(w=1.0, b=0.0, sigma_x=1.0):
    """1-D latent, 1-D observation, one label pinned so the prior is N(0,1)."""
    return LinearGaussianOracle(
        prior_mu=np.array([[0.0, 0.0]]),
        prior_sigma=np.array([[1.0, 1.0]]),
        m_notc=0,
        W=np.array([[w]]),
        b=np.array([b]),
        sigma_x=sigma_x,
        label_probs=np.array([0.5]),
    )


class TestEvidence:
    def test_unit_convolution(self):
        # N(0,1) prior through identity map with unit noise: var 2 at x=0.
        o = single_gaussian_oracle()
        assert o.exact_log_evidence(np.array([0.0])) == pytest.approx(
            -0.5 * np.log(4 * np.pi), abs=1e-12)

    def test_symmetric_two_component_mixture(self):
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.0, 1.0]]), prior_sigma=np.array([[1.0, 1.0]]),
            m_notc=0, W=np.array([[1.0]]), b=np.array([0.0]), sigma_x=1.0,
            label_probs=np.array([0.5]))
        # At x=0 both components contribute equally: log(2 * 0.5 * N(0|1,2)).
        want = -0.5 * np.log(4 * np.pi) - 1.0 / 4.0
        assert o.exact_log_evidence(np.array([0.0])) == pytest.approx(want, abs=1e-12)

    def test_matches_grid_quadrature(self):
        rng = np.random.default_rng(0)
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.2, 0.8]]), prior_sigma=np.array([[0.7, 1.1]]),
            m_notc=0, W=np.array([[0.9]]), b=np.array([0.2]), sigma_x=0.6,
            label_probs=np.array([0.4]))
        grid = np.linspace(-12, 12, 20001)
        for _ in range(3):
            x = rng.normal(size=1)
            dens = np.zeros_like(grid)
            for v, pv in ((0, 0.6), (1, 0.4)):
                mu, sd = o.prior_mu[0, v], o.prior_sigma[0, v]
                prior = np.exp(-0.5 * (grid - mu) ** 2 / sd**2) / (
                    sd * np.sqrt(2 * np.pi))
                lik = np.exp(-0.5 * (x[0] - 0.9 * grid - 0.2) ** 2 / 0.36) / (
                    0.6 * np.sqrt(2 * np.pi))
                dens += pv * prior * lik
            quad = np.log(np.trapezoid(dens, grid))
            assert o.exact_log_evidence(x) == pytest.approx(quad, abs=1e-4)


class TestPosterior:
    def test_uninformative_likelihood(self):
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.0, 1.0]]), prior_sigma=np.array([[0.8, 1.3]]),
            m_notc=1, W=np.zeros((2, 2)), b=np.zeros(2), sigma_x=1.0,
            label_probs=np.array([0.5]))
        y = np.array([1.0])
        post = o.exact_posterior(np.zeros(2), y)
        mu, sd = o.prior_moments(y)
        np.testing.assert_allclose(post.mean, mu, atol=1e-12)
        np.testing.assert_allclose(np.diag(post.cov), sd**2, atol=1e-12)

    def test_sharp_likelihood_limit(self):
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
            prior_sigma=np.ones((2, 2)), m_notc=0, W=np.eye(2),
            b=np.array([0.3, -0.2]), sigma_x=1e-3, label_probs=np.full(2, 0.5))
        x = np.array([0.7, 0.1])
        post = o.exact_posterior(x, np.array([1.0, 0.0]))
        np.testing.assert_allclose(post.mean, x - o.b, atol=1e-2)

    def test_joint_upper_bounds_elbo(self):
        # Any valid q gives an ELBO below the exact log-joint.
        rng = np.random.default_rng(1)
        o = LinearGaussianOracle.random(rng, L=2, m_notc=1, D=3)
        x, y, _ = o.sample_joint(1, rng)
        exact = o.exact_log_joint(x[0], y[0])
        q = o.exact_posterior(x[0], y[0])
        n = 4000
        z = q.sample(n, rng)
        log_q = q.log_pdf(z)
        mu, sd = o.prior_moments(y[0])
        log_prior = (-0.5 * np.log(2 * np.pi) - np.log(sd)
                     - 0.5 * (z - mu) ** 2 / sd**2).sum(axis=1)
        loc = z @ o.W.T + o.b
        log_lik = (-0.5 * np.log(2 * np.pi) - np.log(o.sigma_x)
                   - 0.5 * (x[0] - loc) ** 2 / o.sigma_x**2).sum(axis=1)
        samples = log_lik + log_prior + o.log_prior_y(y[0]) - log_q
        se = samples.std(ddof=1) / np.sqrt(n)
        assert samples.mean() <= exact + 3 * se
        # Tight for the exact posterior.
        assert samples.mean() == pytest.approx(exact, abs=max(5 * se, 1e-6))

    def test_singular_config_raises(self):
        # Wildly mismatched prior precisions make the posterior precision
        # numerically singular in the better-conditioned direction.
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.0, 1.0]]),
            prior_sigma=np.array([[1e-10, 1e-10]]), m_notc=1,
            W=np.ones((1, 2)), b=np.zeros(1), sigma_x=1.0,
            label_probs=np.array([0.5]))
        with pytest.raises(SingularCovariance):
            o.exact_posterior(np.array([0.0]), np.array([1.0]))


class TestCharacteristicMarginal:
    def test_degenerate_prior(self):
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.0, 1.0], [-2.0, 2.0]]),
            prior_sigma=np.ones((2, 2)), m_notc=0, W=np.eye(2), b=np.zeros(2),
            sigma_x=1.0, label_probs=np.array([1.0, 1.0]))
        zc = np.array([0.3, -0.4])
        want = sum(-0.5 * np.log(2 * np.pi) - 0.5 * (zc[i] - o.prior_mu[i, 1]) ** 2
                   for i in range(2))
        # label_probs are clamped away from 1, so allow that epsilon.
        assert o.exact_log_p_zc(zc) == pytest.approx(want, abs=1e-5)

    def test_blockwise_equals_naive(self):
        rng = np.random.default_rng(2)
        o = LinearGaussianOracle.random(rng, L=4, m_notc=0, D=4)
        for _ in range(10):
            zc = rng.normal(size=4) * 2
            assert o.exact_log_p_zc(zc) == pytest.approx(
                o.exact_log_p_zc_naive(zc), abs=1e-12)

    def test_normalizes_by_quadrature(self):
        o = LinearGaussianOracle(
            prior_mu=np.array([[-1.5, 0.9]]), prior_sigma=np.array([[0.6, 1.4]]),
            m_notc=0, W=np.array([[1.0]]), b=np.zeros(1), sigma_x=1.0,
            label_probs=np.array([0.35]))
        grid = np.linspace(-15, 15, 40001)
        dens = np.array([np.exp(o.exact_log_p_zc(np.array([g]))) for g in grid])
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)


class TestAdapter:
    def test_classifier_probs_are_posteriors(self):
        rng = np.random.default_rng(3)
        o = LinearGaussianOracle.random(rng, L=2, m_notc=1, D=3)
        adapter = OracleAdapter(o)
        zc = rng.normal(size=(5, 2))
        p = adapter.classifier_probs(Tensor(zc)).values
        # Bayes check per block: p / (1-p) equals the likelihood-prior ratio.
        for i in range(2):
            mu0, mu1 = o.prior_mu[i]
            sd0, sd1 = o.prior_sigma[i]
            num = (o.label_probs[i] / sd1
                   * np.exp(-0.5 * (zc[:, i] - mu1) ** 2 / sd1**2))
            den = ((1 - o.label_probs[i]) / sd0
                   * np.exp(-0.5 * (zc[:, i] - mu0) ** 2 / sd0**2))
            np.testing.assert_allclose(p[:, i], num / (num + den), rtol=1e-9)

    def test_exact_posterior_mixture_tight(self):
        # ELBO with the exact mixture posterior equals the evidence (MC noise).
        rng = np.random.default_rng(4)
        o = LinearGaussianOracle.random(rng, L=2, m_notc=1, D=3)
        adapter = OracleAdapter(o, posterior="exact")
        x, _, _ = o.sample_joint(1, rng)
        exact = o.exact_log_evidence(x[0])
        q = adapter.encode(Tensor(x))
        k = 3000
        z = q.sample_k(k, rng)
        log_q = q.tile(k).log_prob(z).values
        zc = z.values[:, :2]
        log_pzc = np.array([o.exact_log_p_zc(r) for r in zc])
        log_pznc = (-0.5 * np.log(2 * np.pi) - 0.5 * z.values[:, 2:] ** 2).sum(axis=1)
        log_lik = adapter.log_likelihood(
            Tensor(np.tile(x, (k, 1))), z).values
        samples = log_lik + log_pzc + log_pznc - log_q
        se = samples.std(ddof=1) / np.sqrt(k)
        assert samples.mean() == pytest.approx(exact, abs=max(5 * se, 1e-6))

    def test_meanfield_posterior_moments(self):
        rng = np.random.default_rng(5)
        o = LinearGaussianOracle.random(rng, L=1, m_notc=1, D=2)
        adapter = OracleAdapter(o, posterior="meanfield")
        x, _, _ = o.sample_joint(3, rng)
        q = adapter.encode(Tensor(x))
        assert q.mu.shape == (3, o.m)
        assert np.all(np.isfinite(q.log_sigma.values))

    def test_config_roundtrip(self):
        rng = np.random.default_rng(6)
        o = LinearGaussianOracle.random(rng, L=3, m_notc=2, D=5)
        o2 = LinearGaussianOracle.from_json(o.to_json())
        x = rng.normal(size=5)
        assert o.exact_log_evidence(x) == o2.exact_log_evidence(x)


class TestFullGaussian:
    def test_logpdf_matches_closed_form(self):
        g = FullGaussian(np.zeros(2), np.array([[2.0, 0.5], [0.5, 1.0]]))
        x = np.array([0.3, -0.7])
        det = 2.0 * 1.0 - 0.25
        inv = np.linalg.inv(g.cov)
        want = -0.5 * (2 * np.log(2 * np.pi) + np.log(det) + x @ inv @ x)
        assert g.log_pdf(x)[0] == pytest.approx(want, abs=1e-12)

    def test_sample_moments(self):
        rng = np.random.default_rng(7)
        cov = np.array([[1.5, -0.4], [-0.4, 0.8]])
        g = FullGaussian(np.array([1.0, -2.0]), cov)
        s = g.sample(200_000, rng)
        np.testing.assert_allclose(s.mean(axis=0), g.mean, atol=0.02)
        np.testing.assert_allclose(np.cov(s.T), cov, atol=0.03)
