import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from rhoflow import bayes
from rhoflow.bayes import DiscretePosterior, GridEvaluation, RhoPrior
from rhoflow.errors import DomainError
from rhoflow.training import BAYES_GRID

PRIORS = [
    RhoPrior.uniform(),
    RhoPrior.beta(2, 2),
    RhoPrior.beta(0.5, 3),
    RhoPrior.beta(7, 1.5),
    RhoPrior.truncnorm(-0.7, 0.2),
    RhoPrior.truncnorm(0.3, 1.5),
]

priors = st.sampled_from(PRIORS)


@st.composite
def grids(draw):
    n = draw(st.integers(2, 60))
    pts = draw(st.lists(st.floats(-1, 1), min_size=n, max_size=n, unique=True))
    return sorted(pts)


class TestPriorCdf:
    def test_uniform(self):
        assert bayes.prior_cdf(RhoPrior.uniform(), 0.0) == 0.5

    @pytest.mark.parametrize("rho", [-1.0, -0.3, 0.0, 0.42, 1.0])
    def test_flat_beta_is_uniform(self, rho):
        assert bayes.prior_cdf(RhoPrior.beta(1, 1), rho) == pytest.approx((rho + 1) / 2, abs=1e-14)

    def test_symmetric_beta(self):
        assert bayes.prior_cdf(RhoPrior.beta(2, 2), 0.0) == pytest.approx(0.5, abs=1e-14)

    @pytest.mark.parametrize("prior", PRIORS, ids=str)
    def test_endpoints(self, prior):
        assert bayes.prior_cdf(prior, -1.0) == pytest.approx(0.0, abs=1e-14)
        assert bayes.prior_cdf(prior, 1.0) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("prior", [p for p in PRIORS if p.family != "uniform"], ids=str)
    def test_matches_quadrature(self, prior):
        for rho in np.linspace(-0.98, 0.98, 25):
            ref, _ = integrate.quad(prior.pdf, -1.0, rho, epsabs=1e-11, epsrel=1e-10, limit=200)
            assert abs(bayes.prior_cdf(prior, rho) - ref) < 1e-8

    def test_truncnorm_formula(self):
        from scipy.stats import norm

        mu, sigma, rho = 0.2, 0.5, 0.4
        ref = (norm.cdf((rho - mu) / sigma) - norm.cdf((-1 - mu) / sigma)) / (
            norm.cdf((1 - mu) / sigma) - norm.cdf((-1 - mu) / sigma))
        assert bayes.prior_cdf(RhoPrior.truncnorm(mu, sigma), rho) == pytest.approx(ref, abs=1e-14)

    @given(priors, st.floats(-1, 1), st.floats(-1, 1))
    def test_monotone(self, prior, x, y):
        lo, hi = sorted((x, y))
        assert bayes.prior_cdf(prior, lo) <= bayes.prior_cdf(prior, hi) + 1e-15

    def test_domain(self):
        with pytest.raises(DomainError):
            bayes.prior_cdf(RhoPrior.uniform(), 1.01)

    @pytest.mark.parametrize("text", ["beta:0,1", "truncnorm:0,-1", "gamma:1,1", "beta:1", "uniform:1"])
    def test_bad_priors(self, text):
        with pytest.raises(DomainError):
            RhoPrior.parse(text)

    def test_parse_round_trip(self):
        for prior in PRIORS:
            assert RhoPrior.parse(str(prior)) == prior


class TestIncompleteBeta:
    @pytest.mark.parametrize("a,b", [(0.5, 0.5), (2, 3), (10, 0.7), (30, 40)])
    def test_against_quadrature(self, a, b):
        for x in np.linspace(0.01, 0.99, 15):
            kernel = lambda t: t ** (a - 1) * (1 - t) ** (b - 1)  # noqa: E731
            mode = (a - 1) / (a + b - 2) if a > 1 and b > 1 else None
            pts = [mode] if mode is not None and mode < x else None
            ref, _ = integrate.quad(kernel, 0, x, points=pts, epsabs=1e-14, epsrel=1e-13, limit=200)
            ref /= math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
            assert abs(bayes.betainc_regularized(a, b, x) - ref) < 1e-10

    def test_against_scipy(self):
        from scipy.special import betainc

        for a, b in [(0.5, 0.5), (2, 3), (30, 40), (200, 3)]:
            x = np.linspace(0.001, 0.999, 101)
            ours = np.array([bayes.betainc_regularized(a, b, v) for v in x])
            assert np.max(np.abs(ours - betainc(a, b, x))) < 1e-13

    def test_reflection(self):
        assert bayes.betainc_regularized(2.5, 4, 0.3) == pytest.approx(1 - bayes.betainc_regularized(4, 2.5, 0.7), abs=1e-15)


class TestDiscretizePrior:
    def test_three_point_example(self):
        pmf = bayes.discretize_prior(RhoPrior.uniform(), [-0.5, 0.0, 0.5])
        assert np.allclose(pmf, [0.375, 0.25, 0.375], atol=1e-15)

    @pytest.mark.parametrize("grid", [[0.1, 0.1], [0.5, 0.0], [0.0], [-1.5, 0.0]])
    def test_grid_errors(self, grid):
        with pytest.raises(DomainError):
            bayes.discretize_prior(RhoPrior.uniform(), grid)

    @settings(max_examples=1000, deadline=None)
    @given(priors, grids())
    def test_mass_conservation(self, prior, grid):
        pmf = bayes.discretize_prior(prior, grid)
        assert np.all(pmf >= 0)
        assert abs(pmf.sum() - 1.0) < 1e-12

    @given(st.sampled_from([RhoPrior.uniform(), RhoPrior.beta(3, 3), RhoPrior.truncnorm(0, 0.4)]),
           st.lists(st.floats(0.01, 1), min_size=1, max_size=20, unique=True))
    def test_symmetry(self, prior, half):
        half = sorted(half)
        grid = [-h for h in reversed(half)] + half
        pmf = bayes.discretize_prior(prior, grid)
        assert np.allclose(pmf, pmf[::-1], atol=1e-12)


class TestPosteriorQ:
    prior = bayes.discretize_prior(RhoPrior.uniform(), [-0.5, 0.0, 0.5])

    def test_injective(self):
        post = bayes.posterior_q(GridEvaluation((-0.5, 0.0, 0.5), (3.0, 1.0, 2.0)), self.prior)
        assert list(post.support) == [1.0, 2.0, 3.0]
        assert np.allclose(post.pmf, [0.25, 0.375, 0.375])

    def test_grouping(self):
        post = bayes.posterior_q(GridEvaluation((-0.5, 0.0, 0.5), (1.0, 0.0, 1.0)), self.prior)
        assert list(post.support) == [0.0, 1.0]
        assert np.allclose(post.pmf, [0.25, 0.75], atol=1e-15)

    def test_grouping_tolerates_rounding(self):
        post = bayes.posterior_q(GridEvaluation((-0.5, 0.0, 0.5), (0.1 + 0.2, 0.3, 5.0)), self.prior)
        assert len(post.support) == 2

    def test_constant(self):
        post = bayes.posterior_q(GridEvaluation((-0.5, 0.0, 0.5), (2.0, 2.0, 2.0)), self.prior)
        assert list(post.pmf) == [1.0]

    def test_length_mismatch(self):
        with pytest.raises(DomainError):
            GridEvaluation((0.0, 0.5), (1.0,))
        with pytest.raises(DomainError):
            bayes.posterior_q(GridEvaluation((0.0, 0.5), (1.0, 2.0)), [1.0])

    @settings(deadline=None)
    @given(priors, grids(), st.integers(0, 10_000))
    def test_mean_identity(self, prior, grid, seed):
        q = np.random.default_rng(seed).normal(size=len(grid))
        pmf = bayes.discretize_prior(prior, grid)
        post = bayes.posterior_q(GridEvaluation(grid, q), pmf)
        assert abs(post.pmf.sum() - 1) < 1e-12
        assert abs(post.mean - float(np.dot(q, pmf))) < 1e-12

    def test_identity_on_symmetric_grid(self):
        grid = BAYES_GRID
        pmf = bayes.discretize_prior(RhoPrior.uniform(), grid)
        post = bayes.posterior_q(GridEvaluation(grid, grid), pmf)
        assert abs(post.mean) < 1e-12
        p = bayes.prob_greater(post, 0.0)
        assert 0.45 <= p <= 0.55
        assert p == pytest.approx(sum(m for g, m in zip(grid, pmf) if g > 0), abs=1e-15)


class TestSmoothing:
    two = DiscretePosterior([-1.0, 1.0], [0.5, 0.5])

    def test_point_mass_bump(self):
        post = DiscretePosterior([2.0], [1.0])
        b = post.bandwidth
        assert b == pytest.approx(2e-3)
        assert bayes.smooth_density(post, [2.0])[0] == pytest.approx(1 / (b * math.sqrt(2 * math.pi)))
        lo, hi = bayes.credible_interval(post, 0.95)
        assert lo == pytest.approx(2.0 - 1.959963985 * b, abs=1e-9)
        assert hi == pytest.approx(2.0 + 1.959963985 * b, abs=1e-9)

    def test_fallback_floor(self):
        assert DiscretePosterior([0.0], [1.0]).bandwidth == 1e-6

    def test_bandwidth(self):
        assert self.two.bandwidth == pytest.approx(0.25)

    def test_symmetric_contributions(self):
        b = self.two.bandwidth
        f = bayes.smooth_density(self.two, [0.0])[0]
        assert f == pytest.approx(math.exp(-0.5 / b**2) / (b * math.sqrt(2 * math.pi)))
        x = np.linspace(0.1, 2, 20)
        assert np.allclose(bayes.smooth_density(self.two, x), bayes.smooth_density(self.two, -x), atol=1e-15)

    @given(grids(), st.integers(0, 1000))
    @settings(deadline=None, max_examples=50)
    def test_integrates_to_one(self, grid, seed):
        q = np.random.default_rng(seed).normal(size=len(grid)) * 3
        post = bayes.posterior_q(GridEvaluation(grid, q), bayes.discretize_prior(RhoPrior.uniform(), grid))
        b = post.bandwidth
        x = np.linspace(post.support[0] - 10 * b, post.support[-1] + 10 * b, 200_001)
        assert abs(np.trapezoid(bayes.smooth_density(post, x), x) - 1.0) < 1e-3

    def test_symmetric_interval(self):
        post = DiscretePosterior([-2.0, -0.5, 0.5, 2.0], [0.1, 0.4, 0.4, 0.1])
        lo, hi = bayes.credible_interval(post, 0.9)
        assert abs(lo + hi) < 1e-6

    def test_wide_level_covers_support(self):
        post = DiscretePosterior([-1.0, 0.0, 1.0], [1 / 3, 1 / 3, 1 - 2 / 3])
        lo, hi = bayes.credible_interval(post, 0.999)
        assert lo < -1.0 and hi > 1.0

    @settings(deadline=None, max_examples=50)
    @given(grids(), st.integers(0, 1000), st.floats(0.5, 0.99))
    def test_interval_mass(self, grid, seed, level):
        q = np.random.default_rng(seed).normal(size=len(grid))
        post = bayes.posterior_q(GridEvaluation(grid, q), bayes.discretize_prior(RhoPrior.beta(2, 5), grid))
        lo, hi = bayes.credible_interval(post, level)
        assert lo <= hi
        assert abs(float(bayes.smooth_cdf(post, hi) - bayes.smooth_cdf(post, lo)) - level) < 1e-6

    def test_cdf_monotone(self):
        post = DiscretePosterior([-3.0, 0.2, 0.3, 4.0], [0.1, 0.2, 0.3, 0.4])
        c = bayes.smooth_cdf(post, np.linspace(-10, 10, 5001))
        assert np.all(np.diff(c) >= 0)

    def test_bad_level(self):
        with pytest.raises(DomainError):
            bayes.credible_interval(self.two, 1.0)

    def test_density_table(self):
        x, f = bayes.density_samples(self.two)
        b = self.two.bandwidth
        assert len(x) == len(f) == 512
        assert x[0] == pytest.approx(-1 - 4 * b) and x[-1] == pytest.approx(1 + 4 * b)


class TestProbGreater:
    def test_two_point(self):
        assert bayes.prob_greater(DiscretePosterior([-1.0, 1.0], [0.5, 0.5]), 0.0) == 0.5

    def test_all_above(self):
        assert bayes.prob_greater(DiscretePosterior([1.0, 2.0], [0.3, 0.7]), 0.0) == 1.0

    def test_strict_inequality(self):
        assert bayes.prob_greater(DiscretePosterior([0.0, 2.0], [0.3, 0.7]), 0.0) == pytest.approx(0.7)


class TestSummary:
    def test_analytic_curve(self):
        # analytic rho-curve of a linear-Gaussian model is decreasing in rho
        grid = BAYES_GRID
        q = [0.2 - 0.6 - math.sqrt(0.72 - 0.36) * r / math.sqrt(1 - r * r) for r in grid]
        s = bayes.bayesian_summary(GridEvaluation(grid, q), RhoPrior.uniform())
        lo, hi = s["credible_interval"]["lo"], s["credible_interval"]["hi"]
        assert lo < s["mean"] < hi
        assert s["prob_greater"]["convention"] == "discrete pmf"
        assert 0.15 < s["prob_greater"]["value"] < 0.3
