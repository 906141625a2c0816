import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ltsnet import diffcore as dc
from ltsnet.latents import (
    ConditionalPrior,
    DomainPrior,
    GaussianPosterior,
    RelaxedCategorical,
    gaussian_log_density,
    gaussian_reparameterize,
    gumbel_softmax_sample,
    kl_categorical,
    kl_categorical_logits,
    kl_gaussian_vs_conditional,
    kl_gaussian_vs_standard,
    sample_domain_prior,
    sample_gumbel,
)


def post(mu, log_sigma):
    return GaussianPosterior(np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(log_sigma, float)))


def mc_kl(mu, sigma, m, s, n=100_000, seed=0):
    """Monte Carlo mean and standard error of log q(z) - log p(z), z ~ q."""
    rng = np.random.default_rng(seed)
    z = mu + sigma * rng.standard_normal(n)
    ratio = stats.norm.logpdf(z, mu, sigma) - stats.norm.logpdf(z, m, s)
    return ratio.mean(), ratio.std(ddof=1) / np.sqrt(n)


class TestReparameterize:
    def test_identity(self):
        assert gaussian_reparameterize(post(0.0, 0.0), [0.5]).data[0] == 0.5

    def test_degenerate_sigma(self):
        z = gaussian_reparameterize(post(2.0, -30.0), [7.3]).data[0]
        assert z == pytest.approx(2.0, abs=1e-9)

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(0)
        noise = rng.standard_normal(100_000)
        p = GaussianPosterior(np.full(100_000, 1.5), np.full(100_000, np.log(0.7)))
        z = gaussian_reparameterize(p, noise).data
        assert abs(z.mean() - 1.5) < 3 * z.std() / np.sqrt(len(z))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            gaussian_reparameterize(post([0.0, 0.0], [0.0, 0.0]), [1.0])
        with pytest.raises(ValueError):
            GaussianPosterior(np.zeros(2), np.zeros(3))

    def test_gradient(self):
        mu = dc.Tensor(np.array([0.3, -0.2]))
        noise = np.array([0.4, 1.1])
        f = lambda t: dc.sum_(gaussian_reparameterize(GaussianPosterior(mu, t), noise) * 2.0)  # noqa: E731
        assert dc.check_gradients(f, dc.Tensor(np.array([0.1, -0.5]))).passed


class TestGaussianKL:
    def test_standard_is_zero(self):
        assert kl_gaussian_vs_standard(post(0.0, 0.0)).item() == 0.0

    def test_unit_mean_shift(self):
        assert kl_gaussian_vs_standard(post(1.0, 0.0)).item() == pytest.approx(0.5, abs=1e-10)

    def test_double_width(self):
        assert kl_gaussian_vs_standard(post(0.0, np.log(2.0))).item() == pytest.approx(1.5 - np.log(2.0), abs=1e-10)

    @pytest.mark.parametrize("mu,sigma", [(1.0, 1.0), (0.0, 2.0), (-0.7, 0.4)])
    def test_monte_carlo_standard(self, mu, sigma):
        closed = kl_gaussian_vs_standard(post(mu, np.log(sigma))).item()
        est, se = mc_kl(mu, sigma, 0.0, 1.0)
        assert abs(closed - est) < 3 * se

    def test_conditional_at_prior_mean_is_zero(self):
        prior = ConditionalPrior.one_hot_table(2, 2, 3.0, 1.0)
        p = GaussianPosterior(prior.means(1)[None], np.zeros((1, 2)))
        assert kl_gaussian_vs_conditional(p, prior, [1]).item() == pytest.approx(0.0, abs=1e-15)

    def test_conditional_unit_offset(self):
        prior = ConditionalPrior(np.array([[3.0], [-3.0]]), 1.0)
        p = GaussianPosterior(np.array([[4.0]]), np.zeros((1, 1)))
        assert kl_gaussian_vs_conditional(p, prior, [0]).item() == pytest.approx(0.5, abs=1e-12)

    @pytest.mark.parametrize("sigma_prior", [1.0, 0.5, 2.5])
    def test_conditional_monte_carlo(self, sigma_prior):
        prior = ConditionalPrior(np.array([[1.2], [-0.4]]), sigma_prior)
        p = GaussianPosterior(np.array([[0.3]]), np.array([[np.log(0.8)]]))
        closed = kl_gaussian_vs_conditional(p, prior, [0]).item()
        est, se = mc_kl(0.3, 0.8, 1.2, sigma_prior)
        assert abs(closed - est) < 3 * se

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(-5, 5))
    @settings(max_examples=60, deadline=None)
    def test_translation_invariance(self, mu, c):
        mu = np.array(mu)
        ls = np.full_like(mu, -0.3)
        table = np.stack([np.arange(len(mu), dtype=float), -np.arange(len(mu), dtype=float) - 1])
        a = kl_gaussian_vs_conditional(post(mu, ls), ConditionalPrior(table, 1.3), 0).item()
        b = kl_gaussian_vs_conditional(post(mu + c, ls), ConditionalPrior(table + c, 1.3), 0).item()
        assert a == pytest.approx(b, abs=1e-9)

    @given(st.lists(st.floats(-3, 3), min_size=1, max_size=4), st.floats(-2, 2))
    @settings(max_examples=60, deadline=None)
    def test_standard_equals_zero_row_conditional(self, mu, ls):
        mu = np.array(mu)
        p = post(mu, np.full_like(mu, ls))
        table = np.stack([np.zeros_like(mu), np.ones_like(mu)])
        assert kl_gaussian_vs_standard(p).item() == kl_gaussian_vs_conditional(p, ConditionalPrior(table, 1.0), 0).item()

    @given(st.floats(-4, 4), st.floats(-3, 3))
    @settings(max_examples=80, deadline=None)
    def test_nonnegative(self, mu, ls):
        assert kl_gaussian_vs_standard(post(mu, ls)).item() >= -1e-12


class TestConditionalPrior:
    def test_one_hot_rows_distinct_past_dz(self):
        prior = ConditionalPrior.one_hot_table(4, 2, 3.0)
        np.testing.assert_array_equal(prior.mean_table, [[3, 0], [0, 3], [-3, 0], [0, -3]])

    def test_too_many_domains(self):
        with pytest.raises(ValueError):
            ConditionalPrior.one_hot_table(5, 2)

    def test_duplicate_rows_rejected(self):
        with pytest.raises(ValueError):
            ConditionalPrior(np.zeros((2, 2)))

    def test_out_of_range_domain(self):
        with pytest.raises(IndexError):
            ConditionalPrior.one_hot_table(2, 2).means(2)


class TestGumbelSoftmax:
    def test_uniform_logits_zero_noise(self):
        for t in (0.1, 0.5, 3.0):
            s = gumbel_softmax_sample(RelaxedCategorical(np.zeros(4), t), np.zeros(4)).data
            np.testing.assert_allclose(s, 0.25, atol=1e-15)

    def test_low_temperature_one_hot(self):
        s = gumbel_softmax_sample(RelaxedCategorical(np.array([2.0, 0.0, 0.0]), 1e-3), np.zeros(3)).data
        np.testing.assert_allclose(s, [1.0, 0.0, 0.0], atol=1e-6)

    def test_argmax_law_matches_softmax(self):
        rng = np.random.default_rng(7)
        logits = np.array([1.0, 0.2, -0.5, 0.0])
        n = 100_000
        g = sample_gumbel(rng, (n, 4))
        s = gumbel_softmax_sample(RelaxedCategorical(np.broadcast_to(logits, (n, 4)).copy(), 0.1), g).data
        counts = np.bincount(np.argmax(s, axis=1), minlength=4)
        p = np.exp(logits) / np.exp(logits).sum()
        assert stats.chisquare(counts, n * p).pvalue > 1e-3
        assert np.max(np.abs(s.sum(axis=1) - 1.0)) < 1e-9

    @given(st.floats(1e-3, 10.0), st.integers(0, 2**31 - 1))
    @settings(max_examples=80, deadline=None)
    def test_simplex(self, temperature, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(scale=3, size=(5, 6))
        s = gumbel_softmax_sample(RelaxedCategorical(logits, temperature), sample_gumbel(rng, logits.shape)).data
        assert np.all(s >= 0)
        assert np.max(np.abs(s.sum(axis=-1) - 1.0)) < 1e-9

    def test_rejects_bad_temperature(self):
        with pytest.raises(ValueError):
            RelaxedCategorical(np.zeros(2), 0.0)

    def test_noise_shape_checked(self):
        with pytest.raises(ValueError):
            gumbel_softmax_sample(RelaxedCategorical(np.zeros(3)), np.zeros(2))


class TestCategoricalKL:
    def test_identical(self):
        assert kl_categorical([0.3, 0.7], [0.3, 0.7]) == 0.0

    def test_point_mass_vs_uniform(self):
        assert kl_categorical([1.0, 0.0], [0.5, 0.5]) == pytest.approx(np.log(2), abs=1e-12)

    def test_hand_value(self):
        expected = 0.5 * np.log(0.5 / 0.9) + 0.5 * np.log(0.5 / 0.1)
        assert kl_categorical([0.5, 0.5], [0.9, 0.1]) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(0.51083, abs=1e-5)

    def test_missing_support_is_infinite(self):
        assert kl_categorical([0.5, 0.5], [1.0, 0.0]) == float("inf")

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            kl_categorical([1.0], [0.5, 0.5])

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=60, deadline=None)
    def test_logit_form_matches_plain(self, seed):
        rng = np.random.default_rng(seed)
        logits = rng.normal(size=4)
        p = rng.dirichlet(np.ones(4))
        q = np.exp(logits) / np.exp(logits).sum()
        assert kl_categorical_logits(logits, p).item() == pytest.approx(kl_categorical(q, p), abs=1e-12)
        assert kl_categorical(q, p) >= -1e-12

    def test_logit_form_gradient(self):
        p = np.array([0.2, 0.3, 0.5])
        assert dc.check_gradients(lambda t: kl_categorical_logits(t, p), dc.Tensor(np.array([0.1, -1.0, 0.4]))).passed


class TestDomainPrior:
    def test_single_domain(self):
        for u in (0.0, 0.3, 0.999):
            np.testing.assert_array_equal(sample_domain_prior(DomainPrior([1.0]), u), [1.0])

    def test_inverse_cdf(self):
        prior = DomainPrior([0.5, 0.5])
        np.testing.assert_array_equal(sample_domain_prior(prior, 0.25), [1, 0])
        np.testing.assert_array_equal(sample_domain_prior(prior, 0.75), [0, 1])

    def test_frequency(self):
        rng = np.random.default_rng(0)
        prior = DomainPrior([0.2, 0.8])
        n = 100_000
        freq = np.mean([sample_domain_prior(prior, u)[0] for u in rng.uniform(size=n)])
        assert abs(freq - 0.2) < 3 * np.sqrt(0.2 * 0.8 / n)

    def test_invalid(self):
        with pytest.raises(ValueError):
            DomainPrior([0.5, 0.6])
        with pytest.raises(ValueError):
            sample_domain_prior(DomainPrior.uniform(2), 1.0)


def test_log_density_matches_scipy():
    rng = np.random.default_rng(2)
    z, m, ls = rng.normal(size=(3, 5, 2))
    expected = stats.norm.logpdf(z, m, np.exp(ls)).sum(axis=-1)
    np.testing.assert_allclose(gaussian_log_density(z, m, ls), expected, atol=1e-12)
