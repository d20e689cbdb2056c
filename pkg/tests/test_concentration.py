import math

import numpy as np
import pytest
from scipy import stats

from randerslab.concentration import (
    ConcentrationProfile,
    DimensionError,
    EvaluationError,
    FitUnavailableError,
    concentration_profile,
    fit_decay_constant,
    gaussian,
    gaussian_tail_bound,
    levy_median,
    product_uniform,
    sphere,
    sphere_isoperimetric_check,
    sphere_neighborhood_bound,
    sphere_tail_bound,
    tail_profile_from_deviations,
)

first_coord = lambda x: x[:, 0]


class TestSamplers:
    def test_sphere_samples_have_unit_norm(self):
        x = sphere(64, 1).sample(5000)
        assert x.shape == (5000, 65)
        assert np.max(np.abs(np.linalg.norm(x, axis=1) - 1.0)) < 1e-12

    def test_sphere_coordinates_centered(self):
        n = 20_000
        x = sphere(16, 2).sample(n)
        assert np.max(np.abs(x.mean(axis=0))) < 4.0 / math.sqrt(n)

    def test_same_seed_reproduces_stream(self):
        a = sphere(8, 7).sample(100, stream=3)
        b = sphere(8, 7).sample(100, stream=3)
        assert np.array_equal(a, b)
        c = sphere(8, 7).sample(100, stream=4)
        assert not np.array_equal(a, c)

    def test_gaussian_and_uniform_shapes(self):
        assert gaussian(5, 2.0, 0).sample(10).shape == (10, 5)
        u = product_uniform(3, (-1.0, 2.0), 0).sample(1000)
        assert u.min() >= -1.0 and u.max() <= 2.0

    def test_sphere_needs_dimension_two(self):
        with pytest.raises(DimensionError):
            sphere(1, 0)


class TestLevyMedian:
    def test_coordinate_on_gaussian_is_centered(self):
        n = 10_000
        med = levy_median(first_coord, gaussian(6, 1.0, 11), n)
        assert abs(med) < 4.0 / math.sqrt(n)

    def test_constant_function(self):
        f = lambda x: np.full(x.shape[0], 2.25)
        assert levy_median(f, gaussian(3, 1.0, 0), 500) == 2.25

    def test_radius_on_gaussian3_matches_chi_median(self):
        # oracle: invert the chi(3) CDF
        oracle = stats.chi.ppf(0.5, 3)
        assert oracle == pytest.approx(1.53817, abs=1e-5)
        n = 40_000
        med = levy_median(lambda x: np.linalg.norm(x, axis=1),
                          gaussian(3, 1.0, 12), n)
        pdf_at_median = stats.chi.pdf(oracle, 3)
        se = 1.0 / (2.0 * pdf_at_median * math.sqrt(n))
        assert abs(med - oracle) < 3.0 * se

    def test_median_property_split(self):
        n = 20_000
        sampler = gaussian(4, 1.0, 13)
        med = levy_median(first_coord, sampler, n)
        v = first_coord(sampler.sample(n, stream=0))
        above = float(np.mean(v > med))
        assert abs(above - 0.5) <= 2.0 / math.sqrt(n)

    def test_median_stability_under_doubling(self):
        sampler = gaussian(4, 1.0, 14)
        n = 20_000
        m1 = levy_median(first_coord, sampler, n)
        m2 = levy_median(first_coord, sampler, 2 * n)
        v = first_coord(sampler.sample(n, stream=0))
        iqr = float(np.subtract(*np.percentile(v, [75, 25])))
        assert abs(m2 - m1) < 4.0 / math.sqrt(n) * iqr

    def test_nonfinite_observable_raises(self):
        f = lambda x: np.where(x[:, 0] > 0, x[:, 0], np.nan)
        with pytest.raises(EvaluationError):
            levy_median(f, gaussian(2, 1.0, 15), 200)

    def test_minimum_sample_size(self):
        with pytest.raises(ValueError):
            levy_median(first_coord, gaussian(2, 1.0, 0), 50)


class TestConcentrationProfile:
    def test_constant_function_has_zero_tail(self):
        f = lambda x: np.full(x.shape[0], 1.0)
        prof = concentration_profile(f, gaussian(4, 1.0, 20),
                                     np.array([0.1, 0.5, 1.0]), 2000)
        assert np.array_equal(prof.tail_prob, np.zeros(3))
        assert prof.fit is None

    def test_sphere_tail_dominated_by_levy_bound(self):
        n_dim, n = 32, 30_000
        grid = np.linspace(0.25, 3.0, 12) / math.sqrt(n_dim - 1)
        prof = concentration_profile(first_coord, sphere(n_dim, 21), grid, n)
        bound = sphere_tail_bound(grid, n_dim)
        se = np.sqrt(prof.tail_prob * (1 - prof.tail_prob) / n)
        usable = prof.exceed_counts >= 10
        assert np.all(prof.tail_prob[usable] <= bound[usable] + 3 * se[usable])

    def test_gaussian_tail_matches_exact_oracle(self):
        # counting machinery against the exact normal tail 2(1 - Phi(rho))
        n = 200_000
        grid = np.array([0.5, 1.0, 1.5, 2.0, 2.5])
        prof = concentration_profile(first_coord, gaussian(4, 1.0, 22), grid,
                                     n, rho_p=1.0)
        exact = 2.0 * stats.norm.sf(grid)
        se = np.sqrt(exact * (1 - exact) / n)
        assert np.all(np.abs(prof.tail_prob - exact) <= 3.5 * se)

    def test_tail_monotone_and_in_unit_interval(self):
        prof = concentration_profile(first_coord, gaussian(3, 1.0, 23),
                                     np.linspace(0.1, 3.0, 15), 20_000)
        assert np.all(np.diff(prof.tail_prob) <= 0)
        assert np.all((prof.tail_prob >= 0) & (prof.tail_prob <= 1))

    def test_profile_validation_rejects_bad_grid(self):
        with pytest.raises(ValueError):
            tail_profile_from_deviations(np.ones(10), np.array([0.5, 0.2]),
                                         rho_p=1.0)


class TestFitDecayConstant:
    def test_exact_synthetic_recovery(self):
        # tail exactly C1 exp(-rho^2 / 2) with rho_p = 1
        grid = np.linspace(0.5, 2.5, 9)
        n = 10**6
        c1 = 0.8
        tail = c1 * np.exp(-(grid ** 2) / 2.0)
        prof = ConcentrationProfile(
            rho_grid=grid, tail_prob=tail, exceed_counts=tail * n,
            median_hat=0.0, n_samples=n, sigma_f=1.0, rho_p=1.0, fit=None)
        fit = fit_decay_constant(prof)
        assert fit.C2_hat == pytest.approx(1.0, abs=1e-6)
        assert fit.C1_hat == pytest.approx(c1, rel=1e-6)
        assert fit.stderr < 1e-6

    def test_sphere_constant_is_order_one(self):
        n_dim = 64
        grid = np.linspace(0.25, 3.0, 12) / math.sqrt(n_dim - 1)
        prof = concentration_profile(first_coord, sphere(n_dim, 24), grid, 30_000)
        fit = fit_decay_constant(prof)
        assert 0.5 <= fit.C2_hat <= 2.0

    def test_gaussian_mean_observable_order_one(self):
        # mean of d coordinates is N(0, 1/d); sigma_f = 1/sqrt(d)
        d, n = 100, 100_000
        sigma_f = 1.0 / math.sqrt(d)
        grid = np.linspace(0.5, 3.0, 8) * sigma_f
        f = lambda x: x.mean(axis=1)
        prof = concentration_profile(f, gaussian(d, 1.0, 25), grid, n,
                                     rho_p=sigma_f)
        fit = fit_decay_constant(prof)
        assert 0.5 <= fit.C2_hat <= 2.0
        exact = 2.0 * stats.norm.sf(grid / sigma_f)
        se = np.sqrt(exact * (1 - exact) / n)
        usable = prof.exceed_counts >= 10
        assert np.all(np.abs(prof.tail_prob - exact)[usable]
                      <= (3.5 * se)[usable])

    def test_unavailable_fit_raises(self):
        prof = concentration_profile(
            lambda x: np.full(x.shape[0], 1.0), gaussian(2, 1.0, 26),
            np.array([0.5, 1.0, 2.0]), 1000)
        with pytest.raises(FitUnavailableError):
            fit_decay_constant(prof)

    def test_dimension_scaling_of_raw_slope(self):
        # raw-grid decay slope grows affinely in (N - 1)
        slopes, dims = [], [16, 64, 256]
        for n_dim in dims:
            grid = np.linspace(0.5, 2.5, 9) / math.sqrt(n_dim - 1)
            prof = concentration_profile(first_coord, sphere(n_dim, 27), grid,
                                         30_000, rho_p=1.0)
            fit = fit_decay_constant(prof)
            slopes.append(fit.C2_hat / 2.0)  # slope of -log tail vs rho^2
        x = np.array(dims, dtype=float) - 1.0
        y = np.array(slopes)
        r = np.corrcoef(x, y)[0, 1]
        assert r ** 2 > 0.99


class TestIsoperimetric:
    def test_bound_formula_at_zero(self):
        assert sphere_neighborhood_bound(0.0, 256) == pytest.approx(
            1.0 - math.sqrt(math.pi / 8.0), abs=1e-12)
        assert abs(sphere_neighborhood_bound(0.0, 256)
                   - (1.0 - math.sqrt(math.pi / 8.0))) < 1e-5

    def test_bound_formula_near_full_distance(self):
        val = sphere_neighborhood_bound(1.0, 256)
        assert val == pytest.approx(1.0 - math.sqrt(math.pi / 8.0)
                                    * math.exp(-127.5), abs=1e-10)

    def test_high_dimension_neighborhood_measure(self):
        report = sphere_isoperimetric_check(256, [0.1, 0.2, 0.3], 20_000, 30)
        assert report.passed
        row = report.rows[1]
        assert row.bound == pytest.approx(
            1.0 - math.sqrt(math.pi / 8.0) * math.exp(-0.02 * 255), rel=1e-12)
        assert report.rows[2].empirical == 1.0

    def test_sample_distance_agrees_at_low_dimension(self):
        exact = sphere_isoperimetric_check(2, [0.3, 0.6], 4000, 31)
        sampled = sphere_isoperimetric_check(2, [0.3, 0.6], 4000, 31,
                                             method="sample_distance")
        for r_exact, r_sampled in zip(exact.rows, sampled.rows):
            assert abs(r_exact.empirical - r_sampled.empirical) < 0.02

    def test_dimension_guard(self):
        with pytest.raises(DimensionError):
            sphere_isoperimetric_check(1, [0.1], 1000, 0)


class TestBounds:
    def test_gaussian_bound_shape(self):
        assert gaussian_tail_bound(0.0, 1.0) == 0.5
        assert gaussian_tail_bound(2.0, 1.0) == pytest.approx(0.5 * math.exp(-2.0))
