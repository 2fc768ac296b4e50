import logging
import math

import numpy as np
import pytest

from dpgp.data import synth_sinc
from dpgp.inference import (
    NoiseModel,
    NotPositiveDefiniteError,
    calibrate_mechanism,
    clip_outputs,
    dp_gp_inference,
    dp_posterior,
    exact_posterior,
    regularization_lambda,
)
from dpgp.kernels import InducingSet, KernelMatrices, KernelSpec, gram_matrices
from dpgp.mechanisms import (
    MomentStatistics,
    NoiseScales,
    PrivacyBudget,
    ZERO_NOISE,
    compute_moments,
    unflatten_symmetric,
)


def random_problem(rng, d=None, n=None):
    d = d or int(rng.integers(1, 11))
    n = int(rng.integers(0, 501)) if n is None else n
    spec = KernelSpec(float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.5, 2.0)))
    z = InducingSet.grid_from_bounds(-3.0, 3.0, d) if d > 1 else InducingSet(np.array([[0.0]]))
    x = rng.uniform(-4, 4, size=(n, 1))
    y = np.sin(x[:, 0]) + 0.1 * rng.standard_normal(n)
    return spec, z, x, y, NoiseModel(float(rng.uniform(0.1, 0.5)))


def dense_oracle(km, y, noise):
    # an independent route to the same optimum through K_ZZ^-1
    k_inv = np.linalg.inv(km.k_zz)
    b = km.k_zx @ km.k_zx.T
    s = np.linalg.inv(k_inv + k_inv @ b @ k_inv / noise.variance)
    m = s @ k_inv @ km.k_zx @ y / noise.variance
    return m, s


class TestExactPosterior:
    def test_prior_when_empty(self, fig1_grid, unit_kernel):
        km = gram_matrices(unit_kernel, fig1_grid, np.empty((0, 1)))
        post = exact_posterior(km, np.zeros(0), NoiseModel(0.1))
        np.testing.assert_array_equal(post.m, np.zeros(9))
        np.testing.assert_allclose(post.s, km.k_zz, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(post.sigma_tilde @ km.k_zz, np.eye(9), atol=1e-6)
        assert post.lam == 0 and not post.s21.any() and not post.s22.any()

    def test_scalar_hand_computation(self):
        var, sd, y = 1.7, 0.4, 0.9
        km = KernelMatrices(np.array([[var]]), np.array([[var]]))
        post = exact_posterior(km, [y], NoiseModel(sd))
        sigma = 1 / (var + var**2 / sd**2)
        assert post.sigma_tilde[0, 0] == pytest.approx(sigma, rel=1e-14)
        assert post.m[0] == pytest.approx(var * sigma * var * y / sd**2, rel=1e-14)
        assert post.m[0] == pytest.approx(var * y / (sd**2 + var), rel=1e-13)
        assert post.s[0, 0] == pytest.approx(var * sigma * var, rel=1e-14)

    def test_second_implementation(self, rng):
        spec, z, x, y, noise = random_problem(rng, d=7, n=200)
        km = gram_matrices(spec, z, x)
        post = exact_posterior(km, y, noise)
        m, s = dense_oracle(km, y, noise)
        np.testing.assert_allclose(post.s, s, rtol=1e-6, atol=1e-9)
        np.testing.assert_allclose(post.m, m, rtol=1e-6, atol=1e-9)
        np.testing.assert_array_equal(post.s, post.s.T)


class TestLambda:
    def test_zero_noise(self):
        assert regularization_lambda(ZERO_NOISE, NoiseModel(0.1), 5) == 0

    def test_d1(self):
        lam = regularization_lambda(NoiseScales(1.0, 1.0), NoiseModel(1.0), 1, 0.01)
        assert lam == pytest.approx(math.sqrt(math.log(200)), rel=1e-14)
        assert lam == pytest.approx(2.30181, abs=1e-5)

    def test_linear_in_sigma_b(self):
        l1 = regularization_lambda(NoiseScales(1.0, 0.3), NoiseModel(0.2), 9)
        l2 = regularization_lambda(NoiseScales(1.0, 0.6), NoiseModel(0.2), 9)
        assert l2 == pytest.approx(2 * l1, rel=1e-14)

    @pytest.mark.parametrize("bad", [0.0, 1.0])
    def test_rho_range(self, bad):
        with pytest.raises(ValueError):
            regularization_lambda(ZERO_NOISE, NoiseModel(1.0), 3, bad)


def well_conditioned_case(noise_sd=0.1, n=400, seed=3):
    rng = np.random.default_rng(seed)
    spec = KernelSpec(1.0, 1.0)
    z = InducingSet.grid_from_bounds(-3.0, 3.0, 5)
    x = rng.uniform(-4, 4, size=(n, 1))
    y = np.sinc(2 * x[:, 0] / np.pi) + noise_sd * rng.standard_normal(n)
    km = gram_matrices(spec, z, x)
    return km, compute_moments(km, y), NoiseModel(noise_sd)


class TestDpPosterior:
    def test_zero_noise_matches_exact(self, rng):
        for _ in range(10):
            spec, z, x, y, noise = random_problem(rng)
            km = gram_matrices(spec, z, x)
            exact = exact_posterior(km, y, noise)
            dp = dp_posterior(km, compute_moments(km, y), ZERO_NOISE, noise)
            np.testing.assert_allclose(dp.m, exact.m, atol=1e-10)
            np.testing.assert_allclose(dp.s, exact.s, atol=1e-10)
            assert dp.lam == 0 and not dp.s21.any() and not dp.s22.any()

    def test_naive_drops_only_corrections(self):
        km, st, noise = well_conditioned_case()
        scales = NoiseScales(5.0, 5.0)
        full = dp_posterior(km, st, scales, noise)
        naive = dp_posterior(km, st, scales, noise, naive=True)
        np.testing.assert_array_equal(full.m, naive.m)
        np.testing.assert_allclose(naive.s, full.s - full.s21 - full.s22, atol=1e-12)
        np.testing.assert_allclose(naive.s, km.k_zz @ naive.sigma_tilde @ km.k_zz, rtol=1e-10, atol=1e-14)

    def test_corrections_psd(self, rng):
        km, st, noise = well_conditioned_case()
        for _ in range(20):
            s = float(rng.uniform(0.1, 20))
            post = dp_posterior(km, st, NoiseScales(s, s / rng.uniform(0.5, 2)), noise)
            for mat in (post.s21, post.s22, post.s21 + post.s22):
                np.testing.assert_array_equal(mat, mat.T)
                assert np.linalg.eigvalsh(mat).min() >= -1e-10

    def test_s21_sampling_oracle(self, rng):
        km, st, noise = well_conditioned_case()
        scales = NoiseScales(3.0, 3.0)
        post = dp_posterior(km, st, scales, noise)
        proj = km.k_zz @ post.sigma_tilde / noise.variance
        draws = (proj @ (scales.sigma_a * rng.standard_normal((km.d, 10_000)))).T
        emp = np.cov(draws, rowvar=False)
        err = np.linalg.norm(emp - post.s21) / np.linalg.norm(post.s21)
        assert err < 0.05

    @pytest.mark.parametrize("symmetric,tol", [(True, 0.10)])
    def test_s22_small_noise_oracle(self, rng, symmetric, tol):
        km, st, noise = well_conditioned_case()
        sigma_b = 1e-3 * np.abs(st.b).mean()
        scales = NoiseScales(1e-3, sigma_b)
        post = dp_posterior(km, st, scales, noise, symmetric_noise_terms=symmetric)
        d = km.d
        base = km.k_zz + st.b / noise.variance + post.lam * np.eye(d)
        ms = []
        for _ in range(10_000):
            e_b = unflatten_symmetric(sigma_b * rng.standard_normal(d * (d + 1) // 2), d)
            ms.append(km.k_zz @ np.linalg.solve(base + e_b / noise.variance, st.a) / noise.variance)
        emp = np.cov(np.array(ms), rowvar=False)
        assert np.linalg.norm(emp - post.s22) / np.linalg.norm(emp) < tol

    def test_independent_entry_form_is_biased(self, rng):
        # treating off-diagonal noise as unpaired drops the w w^T term
        km, st, noise = well_conditioned_case()
        scales = NoiseScales(1e-3, 1e-3 * np.abs(st.b).mean())
        sym = dp_posterior(km, st, scales, noise, symmetric_noise_terms=True)
        lit = dp_posterior(km, st, scales, noise, symmetric_noise_terms=False)
        w = sym.sigma_tilde @ st.a
        ks = km.k_zz @ sym.sigma_tilde
        diff = 0.5 * scales.sigma_b**2 / noise.variance**4 * ks @ (np.outer(w, w) - np.diag(w**2)) @ ks.T
        np.testing.assert_allclose(sym.s22 - lit.s22, diff, rtol=1e-8, atol=1e-14 * np.abs(sym.s22).max())

    def test_not_positive_definite(self):
        km = KernelMatrices(np.eye(2), np.zeros((2, 0)))
        bad = MomentStatistics(np.zeros(2), np.diag([-10.0, 0.0]))
        with pytest.raises(NotPositiveDefiniteError) as err:
            dp_posterior(km, bad, ZERO_NOISE, NoiseModel(1.0))
        assert err.value.min_eigenvalue == pytest.approx(-9.0)


class TestDpGpInference:
    def test_no_privacy_limit(self, fig1_grid, unit_kernel):
        rng = np.random.default_rng(0)
        data = synth_sinc(1024, 0.1, rng=rng)
        noise = NoiseModel(0.1)
        exact = exact_posterior(gram_matrices(unit_kernel, fig1_grid, data.x), np.clip(data.y, -1.5, 1.5), noise)
        post = dp_gp_inference(data.x, data.y, fig1_grid, unit_kernel, noise, 1.0, 1.5, PrivacyBudget(1e6, 0.5), rng)
        rmse = np.sqrt(np.mean((post.m - exact.m) ** 2))
        assert rmse < 1e-2 * 1.5

    def test_empty_data(self, fig1_grid, unit_kernel, rng):
        post = dp_gp_inference(
            np.empty((0, 1)), np.empty(0), fig1_grid, unit_kernel, NoiseModel(0.3), 1.0, 1.0, PrivacyBudget(10.0, 1e-4), rng
        )
        assert np.linalg.eigvalsh(post.s).min() > 0
        assert post.lam > 0

    def test_seeded_determinism(self, fig1_grid, unit_kernel):
        data = synth_sinc(200, 0.1, rng=1)
        args = (data.x, data.y, fig1_grid, unit_kernel, NoiseModel(0.1), 1.0, 1.5, PrivacyBudget(3.0, 1e-4))
        p1 = dp_gp_inference(*args, np.random.default_rng(9))
        p2 = dp_gp_inference(*args, np.random.default_rng(9))
        np.testing.assert_array_equal(p1.m, p2.m)
        np.testing.assert_array_equal(p1.s, p2.s)

    def test_setup_matches_calibration(self, fig1_grid, unit_kernel):
        budget = PrivacyBudget(3.0, 1e-4)
        setup = calibrate_mechanism(unit_kernel, fig1_grid, 1.5, budget, c=2.0)
        assert setup.scales.sigma_a == pytest.approx(2.0 * setup.scales.sigma_b)
        data = synth_sinc(100, 0.1, rng=2)
        args = (data.x, data.y, fig1_grid, unit_kernel, NoiseModel(0.1), 2.0, 1.5, budget)
        p1 = dp_gp_inference(*args, np.random.default_rng(4))
        p2 = dp_gp_inference(*args, np.random.default_rng(4), setup=setup)
        np.testing.assert_array_equal(p1.m, p2.m)

    def test_prior_mean_offset(self, fig1_grid, unit_kernel):
        data = synth_sinc(300, 0.1, rng=3)
        args = (data.x, data.y + 5.0, fig1_grid, unit_kernel, NoiseModel(0.1), 1.0, 1.5, PrivacyBudget(30.0, 1e-4))
        shifted = dp_gp_inference(*args, np.random.default_rng(1), prior_mean=5.0)
        base = dp_gp_inference(data.x, data.y, *args[2:], np.random.default_rng(1))
        np.testing.assert_allclose(shifted.m, base.m, atol=1e-9)
        assert shifted.mean_offset == 5.0

    def test_clipping_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="dpgp.inference"):
            out = clip_outputs([0.5, 3.0, -4.0], 1.0)
        np.testing.assert_array_equal(out, [0.5, 1.0, -1.0])
        assert "clipped 2 of 3" in caplog.text
