"""Distribution primitives: pinned values, MC agreement, gradient checks."""

import numpy as np
import pytest

from revae import distributions as D
from revae import tensor as T
from revae.tensor import Tensor

HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def diag(mu, log_sigma):
    return D.DiagGaussian(Tensor(np.asarray(mu, dtype=float)),
                          Tensor(np.asarray(log_sigma, dtype=float)))


class TestGaussian:
    def test_rsample_standard(self):
        d = diag([0.0], [0.0])
        out = d.rsample(Tensor([1.5]))
        assert out.values[0] == pytest.approx(1.5)

    def test_rsample_zero_noise(self):
        d = diag([2.0], [np.log(3.0)])
        assert d.rsample(Tensor([0.0])).values[0] == pytest.approx(2.0)

    def test_rsample_grad_wrt_mu_is_one(self):
        mu = Tensor.param([1.0, -1.0])
        d = D.DiagGaussian(mu, Tensor([0.3, 0.1]))
        with T.Tape() as tape:
            out = T.reduce_sum(d.rsample(Tensor([0.7, -0.2])))
            g = tape.backward(out).of(mu)
        np.testing.assert_allclose(g, [1.0, 1.0])

    def test_log_prob_standard_at_zero(self):
        assert diag([0.0], [0.0]).log_prob(Tensor([0.0])).item() == pytest.approx(
            -HALF_LOG_2PI)

    def test_log_prob_at_mode(self):
        assert diag([1.0], [0.0]).log_prob(Tensor([1.0])).item() == pytest.approx(
            -HALF_LOG_2PI)

    def test_log_prob_additive_over_dims(self):
        assert diag([0.0, 0.0], [0.0, 0.0]).log_prob(
            Tensor([0.0, 0.0])).item() == pytest.approx(-2 * HALF_LOG_2PI)

    def test_log_prob_batched_rows(self):
        d = diag([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [0.0, 0.0]])
        out = d.log_prob(Tensor([[0.0, 0.0], [1.0, 1.0]]))
        np.testing.assert_allclose(out.values, [-2 * HALF_LOG_2PI] * 2)

    def test_kl_std_identical(self):
        assert diag([0.0], [0.0]).kl_std().item() == pytest.approx(0.0)

    def test_kl_std_mean_shift(self):
        assert diag([1.0], [0.0]).kl_std().item() == pytest.approx(0.5)

    def test_kl_std_sigma_e(self):
        # 0.5 * (e^2 - 1 - 2); MC-verified below.
        want = 0.5 * (np.e**2 - 3.0)
        assert diag([0.0], [1.0]).kl_std().item() == pytest.approx(want, abs=1e-12)

    def test_kl_std_matches_mc(self):
        rng = np.random.default_rng(3)
        n = 100_000
        for _ in range(5):
            mu = rng.normal(size=2)
            ls = rng.normal(size=2) * 0.5
            d = diag(mu, ls)
            z = mu + np.exp(ls) * rng.standard_normal((n, 2))
            log_q = d.log_prob(Tensor(z)).values
            log_p = D.std_normal_log_prob(Tensor(z)).values
            samples = log_q - log_p
            se = samples.std(ddof=1) / np.sqrt(n)
            assert abs(samples.mean() - d.kl_std().item()) < 3 * se

    def test_kl_to_general_matches_mc(self):
        rng = np.random.default_rng(4)
        n = 100_000
        p = diag([0.3, -0.2], [0.1, -0.3])
        q = diag([-0.5, 0.4], [0.2, 0.0])
        z = p.mu.values + np.exp(p.log_sigma.values) * rng.standard_normal((n, 2))
        samples = p.log_prob(Tensor(z)).values - q.log_prob(Tensor(z)).values
        se = samples.std(ddof=1) / np.sqrt(n)
        assert abs(samples.mean() - p.kl_to(q).item()) < 3 * se

    def test_rsample_moments(self):
        rng = np.random.default_rng(5)
        n = 100_000
        d = diag([1.3], [np.log(0.7)])
        zs = d.sample_k(n, rng).values.ravel()
        se_mean = 0.7 / np.sqrt(n)
        assert abs(zs.mean() - 1.3) < 4 * se_mean
        se_std = 0.7 / np.sqrt(2 * (n - 1))
        assert abs(zs.std(ddof=1) - 0.7) < 4 * se_std

    def test_normalization_by_importance_sampling(self):
        # integral of exp(log_prob) estimated from a wider proposal is ~1.
        rng = np.random.default_rng(6)
        n = 100_000
        d = diag([0.5, -0.5], [np.log(0.8), np.log(1.2)])
        prop_sigma = 2.5
        z = prop_sigma * rng.standard_normal((n, 2))
        log_prop = (-0.5 * np.log(2 * np.pi * prop_sigma**2)
                    - 0.5 * z**2 / prop_sigma**2).sum(axis=1)
        w = np.exp(d.log_prob(Tensor(z)).values - log_prop)
        se = w.std(ddof=1) / np.sqrt(n)
        assert abs(w.mean() - 1.0) < 3 * se

    def test_log_prob_gradients_finite_diff(self):
        rng = np.random.default_rng(7)
        z = Tensor(rng.normal(size=3))
        for _ in range(10):
            point = rng.normal(size=6)
            err = T.finite_diff_check(
                lambda p: diag_from_flat(p, z), Tensor(point))
            assert err < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeMismatch):
            diag([0.0, 0.0], [0.0])


def diag_from_flat(p: Tensor, z: Tensor) -> Tensor:
    mu = T.narrow(p, 0, 0, 3)
    ls = T.narrow(p, 0, 3, 3)
    return D.DiagGaussian(mu, ls).log_prob(z)


class TestBernoulli:
    def test_log_half(self):
        b = D.BernoulliVec(Tensor([0.5]))
        assert b.log_prob([1.0]).item() == pytest.approx(np.log(0.5))

    def test_additive(self):
        b = D.BernoulliVec(Tensor([0.5, 0.5]))
        assert b.log_prob([1.0, 0.0]).item() == pytest.approx(2 * np.log(0.5))

    def test_near_certain(self):
        b = D.BernoulliVec(Tensor([1.0 - D.PROB_EPS]))
        assert b.log_prob([1.0]).item() == pytest.approx(0.0, abs=1e-6)

    def test_rejects_non_binary(self):
        with pytest.raises(D.NonBinaryLabel):
            D.BernoulliVec(Tensor([0.5])).log_prob([0.5])

    def test_sample_extreme_prob(self):
        rng = np.random.default_rng(8)
        b = D.BernoulliVec(Tensor(np.full(10_000, 1.0 - D.PROB_EPS)))
        draws = b.sample(rng)
        assert draws.mean() >= 1.0 - 1e-3

    def test_sample_mean_binomial_ci(self):
        rng = np.random.default_rng(9)
        n = 100_000
        b = D.BernoulliVec(Tensor(np.full(n, 0.5)))
        assert abs(b.sample(rng).mean() - 0.5) < 0.005

    def test_clamping_keeps_grad_finite(self):
        p = Tensor.param([0.5])
        with T.Tape() as tape:
            b = D.BernoulliVec(T.sigmoid(T.mul(p, 40.0)))  # saturates
            out = b.log_prob([0.0])
            g = tape.backward(out).of(p)
        assert np.all(np.isfinite(g))


class TestLaplace:
    def test_mode_unit_scale(self):
        lik = D.LaplaceLik(Tensor([0.3]), Tensor(1.0))
        assert lik.log_prob([0.3]).item() == pytest.approx(-np.log(2.0))

    def test_unit_distance(self):
        lik = D.LaplaceLik(Tensor([0.0]), Tensor(1.0))
        assert lik.log_prob([1.0]).item() == pytest.approx(-1.0 - np.log(2.0))

    def test_half_scale_normalizer(self):
        lik = D.LaplaceLik(Tensor([0.0]), Tensor(0.5))
        assert lik.log_prob([0.0]).item() == pytest.approx(0.0)

    def test_gradient_wrt_loc(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=4))
        for _ in range(10):
            loc = rng.normal(size=4)
            err = T.finite_diff_check(
                lambda l: D.LaplaceLik(l, Tensor(0.4)).log_prob(x), Tensor(loc))
            assert err < 1e-4


class TestCategorical:
    def test_degenerate_always_zero(self):
        rng = np.random.default_rng(11)
        c = D.CategoricalDist(Tensor([1.0, 0.0, 0.0]))
        assert all(c.sample(rng) == 0 for _ in range(100))

    def test_log_prob_picks_index(self):
        c = D.CategoricalDist(Tensor([0.2, 0.3, 0.5]))
        assert c.log_prob(2).item() == pytest.approx(np.log(0.5))

    def test_batched_sampling_frequencies(self):
        rng = np.random.default_rng(12)
        probs = np.tile([0.1, 0.6, 0.3], (50_000, 1))
        c = D.CategoricalDist(Tensor(probs))
        draws = c.sample(rng)
        freq = np.bincount(draws, minlength=3) / draws.size
        np.testing.assert_allclose(freq, [0.1, 0.6, 0.3], atol=0.01)

    def test_invalid_probs_rejected(self):
        with pytest.raises(ValueError):
            D.CategoricalDist(Tensor([0.5, 0.4]))
