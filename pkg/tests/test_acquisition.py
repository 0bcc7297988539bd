import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from parmis import acquisition as acq
from parmis import gp, nsga2
from parmis.errors import InputError
from parmis.gp import KernelSpec
from parmis.pareto import hypervolume

H_STD_NORMAL = 0.5 * (1 + math.log(2 * math.pi))


def quad_gaussian_entropy(sigma):
    f = lambda x: -stats.norm.pdf(x, 0, sigma) * stats.norm.logpdf(x, 0, sigma)
    return integrate.quad(f, -40 * sigma, 40 * sigma, epsabs=1e-13, epsrel=1e-13, limit=200)[0]


def quad_truncated_entropy(mu, sigma, upper):
    """Entropy of N(mu, sigma^2) conditioned on X <= upper, by numerical integration.

    The normalizer comes from mpmath so the oracle shares no special-function
    code with the implementation.
    """
    z = (upper - mu) / sigma
    log_mass = float(mpmath.log(mpmath.ncdf(z)))

    def neg_p_log_p(x):
        log_p = stats.norm.logpdf(x, mu, sigma) - log_mass
        return -math.exp(log_p) * log_p

    lower = min(mu, upper) - 12 * sigma
    width = sigma / max(1.0, -z)
    pts = [upper - width * c for c in (0.5, 2, 8) if upper - width * c > lower]
    return integrate.quad(neg_p_log_p, lower, upper, points=sorted(pts), epsabs=1e-12, epsrel=1e-12, limit=400)[0]


def prior_model(dim=1, far=1e6):
    """A GP whose data sits so far away that every query sees the prior N(0, 1)."""
    return gp.fit(np.full((1, dim), far), [0.0], KernelSpec.default(dim, 1.0), noise=0.0)


class TestGaussianEntropy:
    def test_unit(self):
        assert acq.gaussian_entropy([1.0]) == pytest.approx(1.418939, abs=1e-6)

    def test_additive(self):
        assert acq.gaussian_entropy([1.0, 1.0]) == pytest.approx(2 * H_STD_NORMAL, abs=1e-12)

    def test_half_sigma_matches_quadrature(self):
        value = acq.gaussian_entropy([0.5])
        assert value == pytest.approx(H_STD_NORMAL + math.log(0.5), abs=1e-12)
        assert abs(value - quad_gaussian_entropy(0.5)) < 1e-9

    def test_non_positive_std(self):
        with pytest.raises(InputError):
            acq.gaussian_entropy([1.0, 0.0])


class TestTruncatedTerm:
    def test_gamma_zero(self):
        # erf-based oracle for the standard normal pdf/cdf
        pdf0 = 1 / math.sqrt(2 * math.pi)
        cdf0 = 0.5 * (1 + math.erf(0.0))
        expected = 0 * pdf0 / (2 * cdf0) - math.log(cdf0)
        assert acq.truncated_entropy_term(0.0) == pytest.approx(expected, abs=1e-15)
        assert expected == pytest.approx(math.log(2))

    def test_large_gamma_vanishes(self):
        assert 0 <= acq.truncated_entropy_term(8.0) < 1e-12

    @pytest.mark.parametrize("g", [-3.0, -1.0, 1.0, 3.0])
    def test_matches_quadrature(self, g):
        expected = H_STD_NORMAL - quad_truncated_entropy(0.0, 1.0, g)
        assert acq.truncated_entropy_term(g) == pytest.approx(expected, abs=1e-6)

    def test_extreme_values_finite(self):
        vals = acq.truncated_entropy_term(np.array([-1e4, -40.0, -6.5, -5.9, 40.0, 1e4]))
        assert np.all(np.isfinite(vals)) and np.all(vals >= 0)

    @pytest.mark.parametrize("g", [-20.0, -6.0])
    def test_continuous_in_far_tail(self, g):
        # log_ndtr changes evaluation method near -20
        a, b = acq.truncated_entropy_term(g - 1e-9), acq.truncated_entropy_term(g + 1e-9)
        assert abs(a - b) < 1e-7

    @settings(max_examples=200)
    @given(st.floats(-50, 50))
    def test_non_negative(self, g):
        assert acq.truncated_entropy_term(g) >= 0


class TestUtility:
    def _context(self, ystar, samples=1):
        model = prior_model()
        sample = acq.ParetoFrontSample([[ystar]])
        return acq.AcquisitionContext([model], [sample] * samples, [True], bounds=[[0.0, 1.0]])

    def test_unit_gaussian_at_threshold(self):
        ctx = self._context(0.0)
        assert acq.utility(np.array([0.3]), ctx) == pytest.approx(math.log(2), abs=1e-12)

    def test_sample_averaging_idempotent(self):
        one, two = self._context(0.4), self._context(0.4, samples=2)
        x = np.array([0.7])
        assert acq.utility(x, two) == pytest.approx(acq.utility(x, one), abs=1e-15)

    def test_known_point_has_no_information(self):
        x = np.array([[0.1], [0.4], [0.9]])
        models = [gp.fit(x, np.sin(3 * x[:, 0]), KernelSpec([0.3]), 0.0),
                  gp.fit(x, np.cos(3 * x[:, 0]), KernelSpec([0.3]), 0.0)]
        cfg = nsga2.Nsga2Config(bounds=[[0.0, 1.0]], population_size=20, generations=10)
        ctx = acq.build_context(models, cfg, seed=1)
        assert acq.utility(np.array([0.4]), ctx) == pytest.approx(0.0, abs=1e-12)

    def test_closed_form_vs_quadrature(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            mu, sigma = rng.uniform(-3, 3), rng.uniform(0.1, 3)
            ystar = mu + sigma * rng.uniform(-4, 4)
            term = acq.truncated_entropy_term((ystar - mu) / sigma)
            gap = acq.gaussian_entropy([sigma]) - quad_truncated_entropy(mu, sigma, ystar)
            assert term == pytest.approx(gap, abs=1e-5)

    def test_dimension_checked(self):
        with pytest.raises(InputError):
            acq.utility(np.array([0.1, 0.2]), self._context(0.0))


def _two_objective_models(n=6):
    x = np.linspace(0.05, 0.95, n)[:, None]
    k = KernelSpec([0.12], 1.0)
    return [gp.fit(x, np.sin(6 * x[:, 0]) + x[:, 0], k, 0.0), gp.fit(x, np.cos(5 * x[:, 0]), k, 0.0)]


class TestSamplePareto:
    CFG = nsga2.Nsga2Config(bounds=[[0.0, 1.0]], population_size=20, generations=15)

    def test_minimal_data(self):
        models = [gp.fit([[0.5]], [1.0], KernelSpec([0.2]), 0.0), gp.fit([[0.5]], [2.0], KernelSpec([0.2]), 0.0)]
        sample = acq.sample_pareto_front(models, self.CFG, seed=0)
        assert sample.size >= 1
        np.testing.assert_array_equal(sample.componentwise_max, sample.vectors.max(0))

    def test_deterministic(self):
        models = _two_objective_models()
        a = acq.sample_pareto_front(models, self.CFG, seed=5)
        b = acq.sample_pareto_front(models, self.CFG, seed=5)
        np.testing.assert_array_equal(a.vectors, b.vectors)

    def test_sampled_front_mutually_non_dominated_under_max(self):
        sample = acq.sample_pareto_front(_two_objective_models(), self.CFG, seed=2)
        v = sample.vectors
        for i in range(len(v)):
            for j in range(len(v)):
                assert not (np.all(v[j] >= v[i]) and np.any(v[j] > v[i]))

    def test_dense_models_recover_analytic_front(self):
        x = np.linspace(-5, 5, 200)[:, None]
        f1, f2 = x[:, 0] ** 2, (x[:, 0] - 2) ** 2
        models = []
        for y in (f1, f2):
            kern = gp.fit_hyperparameters(x, y, KernelSpec([1.0]), noise=1e-6)
            models.append(gp.fit(x, y, kern, 1e-6))
        cfg = nsga2.Nsga2Config(bounds=[[-5.0, 5.0]], population_size=40, generations=50)
        sample = acq.sample_pareto_front(models, cfg, seed=3)
        front_min = -sample.vectors  # back to minimization
        ref = (30.0, 30.0)
        inside = front_min[np.all(front_min < ref, axis=1)]
        f = np.linspace(0, 4, 100_001)
        analytic = np.trapezoid(ref[1] - (np.sqrt(f) - 2) ** 2, f) + (ref[0] - 4) * ref[1]
        assert hypervolume(inside, ref) == pytest.approx(analytic, rel=0.10)


class TestSelectNext:
    def test_budget_one_flat_utility_returns_random_candidate(self):
        model = prior_model(dim=3)
        ctx = acq.AcquisitionContext([model, model], [acq.ParetoFrontSample([[0.2, 0.1]])], [True, True],
                                     bounds=[[-1.0, 1.0]] * 3)
        chosen = acq.select_next(ctx, candidate_budget=1, seed=9)
        expected = -1.0 + np.random.default_rng(9).random((1, 3))[0] * 2.0
        np.testing.assert_array_equal(chosen, expected)

    def test_constant_utility_first_candidate(self):
        model = prior_model(dim=2)
        ctx = acq.AcquisitionContext([model], [acq.ParetoFrontSample([[0.0]])], [True], bounds=[[0.0, 1.0]] * 2)
        chosen = acq.select_next(ctx, candidate_budget=50, seed=4)
        expected = np.random.default_rng(4).random((50, 2))[0]
        np.testing.assert_array_equal(chosen, expected)

    def test_finds_dominant_peak(self):
        models = _two_objective_models()
        cfg = nsga2.Nsga2Config(bounds=[[0.0, 1.0]], population_size=20, generations=20)
        ctx = acq.build_context(models, cfg, seed=0)
        grid = np.linspace(0, 1, 10_000)[:, None]
        u = acq.utility_batch(grid, ctx)
        peak = grid[np.argmax(u), 0]
        # the peak must be dominant: every local maximum 0.1 away is clearly lower
        far = np.abs(grid[:, 0] - peak) > 0.1
        assert u.max() > 1.2 * u[far].max()
        for seed in range(3):
            chosen = acq.select_next(ctx, 512, seed=seed, history=models[0].inputs)
            assert abs(chosen[0] - peak) < 0.1

    def test_deterministic(self):
        models = _two_objective_models()
        cfg = nsga2.Nsga2Config(bounds=[[0.0, 1.0]], population_size=20, generations=10)
        ctx = acq.build_context(models, cfg, seed=0)
        a = acq.select_next(ctx, 64, seed=1, history=models[0].inputs)
        b = acq.select_next(ctx, 64, seed=1, history=models[0].inputs)
        np.testing.assert_array_equal(a, b)

    def test_budget_validated(self):
        model = prior_model()
        ctx = acq.AcquisitionContext([model], [acq.ParetoFrontSample([[0.0]])], [True], bounds=[[0.0, 1.0]])
        with pytest.raises(InputError):
            acq.select_next(ctx, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_utility_non_negative_everywhere(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (5, 2))
    k = KernelSpec([0.3, 0.3])
    models = [gp.fit(x, rng.normal(size=5), k, 1e-4), gp.fit(x, rng.normal(size=5), k, 1e-4)]
    cfg = nsga2.Nsga2Config(bounds=[[0.0, 1.0]] * 2, population_size=12, generations=5)
    ctx = acq.build_context(models, cfg, seed=seed)
    assert np.all(acq.utility_batch(rng.uniform(0, 1, (200, 2)), ctx) >= 0)
