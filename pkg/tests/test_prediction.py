import math

import numpy as np
import pytest
from scipy import stats

from dpgp.inference import NoiseModel, VariationalPosterior, dp_posterior, exact_posterior
from dpgp.kernels import InducingSet, KernelSpec, eval_kernel, gram_matrices
from dpgp.mechanisms import NoiseScales, compute_moments, privatize_moments
from dpgp.prediction import (
    PredictiveDistribution,
    clip_loglik,
    loglik_bounds,
    predict,
    validation_loglik_terms,
)


def fitted(rng, spec, z, noisy=True):
    x = rng.uniform(-4, 4, size=(300, 1))
    y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(300)
    km = gram_matrices(spec, z, x)
    if not noisy:
        return exact_posterior(km, y, NoiseModel(0.1))
    scales = NoiseScales(2.0, 2.0)
    released = privatize_moments(compute_moments(km, y), scales, rng)
    return dp_posterior(km, released, scales, NoiseModel(0.3))


def dense_predict(post, spec, z, v):
    # elementwise kernel evaluations and explicit inverses
    zp = z.points
    kzz = np.array([[eval_kernel(spec, a, b) for b in zp] for a in zp]) + 1e-8 * spec.variance * np.eye(len(zp))
    kvz = np.array([[eval_kernel(spec, a, b) for b in zp] for a in v])
    kvv = np.array([[eval_kernel(spec, a, b) for b in v] for a in v])
    inv = np.linalg.inv(kzz)
    return kvz @ inv @ post.m, kvv - kvz @ inv @ (kzz - post.s) @ inv @ kvz.T


class TestPredict:
    @pytest.mark.parametrize("noisy", [False, True])
    def test_identity_at_inducing_points(self, rng, fig1_grid, unit_kernel, noisy):
        post = fitted(rng, unit_kernel, fig1_grid, noisy)
        full = predict(post, unit_kernel, fig1_grid, fig1_grid.points, diag_only=False)
        diag = predict(post, unit_kernel, fig1_grid, fig1_grid.points)
        np.testing.assert_allclose(full.mean, post.m, atol=1e-10)
        np.testing.assert_allclose(full.cov, post.s, atol=1e-10)
        np.testing.assert_allclose(diag.var, np.diag(post.s), atol=1e-10)

    def test_prior(self, fig1_grid, unit_kernel, rng):
        km = gram_matrices(unit_kernel, fig1_grid, np.empty((0, 1)))
        prior = VariationalPosterior(np.zeros(9), km.k_zz, np.linalg.inv(km.k_zz))
        v = rng.uniform(-5, 5, size=(12, 1))
        pred = predict(prior, unit_kernel, fig1_grid, v, diag_only=False)
        np.testing.assert_allclose(pred.mean, 0, atol=1e-14)
        np.testing.assert_allclose(pred.cov, np.exp(-0.5 * (v - v.T) ** 2), atol=1e-9)

    def test_dense_oracle_2d(self, rng):
        spec = KernelSpec(1.3, (0.9, 1.6), "product_exponentiated_quadratic")
        z = InducingSet.grid_from_bounds([-2, -2], [2, 2], [3, 3])
        km = gram_matrices(spec, z, np.empty((0, 2)))
        a = rng.normal(size=(9, 9))
        s = km.k_zz @ np.linalg.inv(km.k_zz + a @ a.T) @ km.k_zz
        post = VariationalPosterior(rng.normal(size=9), 0.5 * (s + s.T), np.eye(9))
        v = rng.uniform(-3, 3, size=(15, 2))
        mean, cov = dense_predict(post, spec, z, v)
        pred = predict(post, spec, z, v, diag_only=False)
        np.testing.assert_allclose(pred.mean, mean, atol=1e-10)
        np.testing.assert_allclose(pred.cov, cov, atol=1e-10)
        np.testing.assert_allclose(predict(post, spec, z, v).var, np.diag(cov), atol=1e-10)

    def test_wider_with_extra_covariance(self, rng, fig1_grid, unit_kernel):
        post = fitted(rng, unit_kernel, fig1_grid)
        p = rng.normal(size=(9, 4))
        wider = VariationalPosterior(post.m, post.s + p @ p.T, post.sigma_tilde)
        v = rng.uniform(-5, 5, size=(50, 1))
        assert np.all(predict(wider, unit_kernel, fig1_grid, v).var >= predict(post, unit_kernel, fig1_grid, v).var)

    def test_mean_offset(self, rng, fig1_grid, unit_kernel):
        post = fitted(rng, unit_kernel, fig1_grid, noisy=False)
        from dataclasses import replace

        v = np.linspace(-4, 4, 7)
        shifted = predict(replace(post, mean_offset=2.5), unit_kernel, fig1_grid, v)
        np.testing.assert_allclose(shifted.mean, predict(post, unit_kernel, fig1_grid, v).mean + 2.5)

    def test_negative_variance_error(self, fig1_grid, unit_kernel):
        bad = VariationalPosterior(np.zeros(9), -0.5 * np.eye(9), np.eye(9))
        with pytest.raises(np.linalg.LinAlgError):
            predict(bad, unit_kernel, fig1_grid, fig1_grid.points)

    def test_tiny_negative_clamped(self, fig1_grid, unit_kernel):
        post = VariationalPosterior(np.zeros(9), -5e-11 * np.eye(9), np.eye(9))
        # S = -5e-11 I gives diagonal variances of -5e-11 at the inducing points
        var = predict(post, unit_kernel, fig1_grid, fig1_grid.points).var
        np.testing.assert_array_equal(var, np.zeros(9))


class TestLoglik:
    def test_maximum(self):
        noise = NoiseModel(0.2)
        pred = PredictiveDistribution(np.array([0.3]), np.array([0.0]), True)
        np.testing.assert_allclose(
            validation_loglik_terms(pred, [0.3], noise), -0.5 * math.log(2 * math.pi) - math.log(0.2), rtol=1e-14
        )

    def test_minimum(self):
        noise, r_y = NoiseModel(0.2), 1.5
        pred = PredictiveDistribution(np.array([r_y]), np.array([0.0]), True)
        l_max = -0.5 * math.log(2 * math.pi) - math.log(0.2)
        np.testing.assert_allclose(validation_loglik_terms(pred, [-r_y], noise), l_max - 2 * r_y**2 / 0.04, rtol=1e-13)
        center, radius = loglik_bounds(r_y, noise)
        assert center - radius == pytest.approx(l_max - 2 * r_y**2 / 0.04, rel=1e-14)
        assert center + radius == pytest.approx(l_max, rel=1e-14)

    def test_scalar_density_oracle(self):
        noise = NoiseModel(0.3)
        mean, var, y = np.array([0.1, -1.0, 2.0]), np.array([0.05, 0.0, 1.2]), np.array([0.0, -0.4, 3.1])
        pred = PredictiveDistribution(mean, var, True)
        expected = [stats.norm.logpdf(yi, mi, math.sqrt(vi + 0.09)) for yi, mi, vi in zip(y, mean, var)]
        np.testing.assert_allclose(validation_loglik_terms(pred, y, noise), expected, rtol=1e-13)

    def test_full_covariance_uses_diagonal(self):
        noise = NoiseModel(0.3)
        cov = np.array([[0.2, 0.1], [0.1, 0.4]])
        full = PredictiveDistribution(np.zeros(2), cov, False)
        diag = PredictiveDistribution(np.zeros(2), np.diag(cov), True)
        np.testing.assert_array_equal(validation_loglik_terms(full, [1, 2], noise), validation_loglik_terms(diag, [1, 2], noise))

    def test_clip_bounds_example(self):
        clipped, center, radius = clip_loglik([0.0], 1.0, NoiseModel(0.1))
        assert radius == pytest.approx(100.0)
        assert center == pytest.approx(-98.616354, abs=1e-6)
        assert center == pytest.approx(-0.5 * math.log(2 * math.pi) + math.log(10) - 100, rel=1e-15)

    def test_clip_behaviour(self):
        noise = NoiseModel(0.1)
        center, radius = loglik_bounds(1.0, noise)
        terms = np.array([-1e6, center, center + radius + 5, 0.5])
        clipped, _, _ = clip_loglik(terms, 1.0, noise)
        assert clipped[0] == center - radius
        assert clipped[1] == center
        assert clipped[2] == center + radius
        assert clipped[3] == 0.5
        assert clipped.max() <= center + radius
