"""Variational sparse-GP posteriors: exact, and private with noise-aware covariance."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg

from dpgp.kernels import InducingSet, KernelMatrices, KernelSpec, gram_matrices
from dpgp.mechanisms import (
    ZERO_NOISE,
    MomentStatistics,
    NoiseScales,
    PrivacyBudget,
    calibrate_analytic_gaussian,
    compute_moments,
    privatize_moments,
)
from dpgp.sensitivity import SensitivityBounds, joint_sensitivity, kernel_norm_bound

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    obs_noise_sd: float

    def __post_init__(self):
        if not self.obs_noise_sd > 0:
            raise ValueError(f"observation noise sd must be positive, got {self.obs_noise_sd}")

    @property
    def variance(self) -> float:
        return self.obs_noise_sd**2


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    def __init__(self, what: str, min_eigenvalue: float):
        super().__init__(f"{what} is not positive definite (min eigenvalue {min_eigenvalue:.3g})")
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class VariationalPosterior:
    """``q(u) = N(m, s)`` over function values at the inducing inputs.

    ``sigma_tilde``, ``lam``, ``s21`` and ``s22`` are the internals of the
    private update; they are zero for the exact posterior. ``mean_offset``
    is a constant prior mean that was removed from the outputs before fitting.
    """

    m: np.ndarray
    s: np.ndarray
    sigma_tilde: np.ndarray
    lam: float = 0.0
    s21: Optional[np.ndarray] = None
    s22: Optional[np.ndarray] = None
    scales: NoiseScales = ZERO_NOISE
    mean_offset: float = 0.0

    def __post_init__(self):
        d = len(self.m)
        if self.s21 is None:
            object.__setattr__(self, "s21", np.zeros((d, d)))
        if self.s22 is None:
            object.__setattr__(self, "s22", np.zeros((d, d)))

    @property
    def d(self) -> int:
        return len(self.m)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def _cholesky(a: np.ndarray, what: str):
    try:
        return linalg.cho_factor(a, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise NotPositiveDefiniteError(what, float(np.linalg.eigvalsh(a).min())) from None


def _check_pd(a: np.ndarray, what: str) -> None:
    _cholesky(a, what)


def exact_posterior(km: KernelMatrices, y, noise: NoiseModel) -> VariationalPosterior:
    """Optimal Gaussian ``q(u)`` for fixed inducing inputs and hyperparameters."""
    stats_ = compute_moments(km, y)
    k = km.k_zz
    inv_var = 1.0 / noise.variance
    # same evaluation order as dp_posterior so the zero-noise case agrees to round-off
    prec = _sym(k + inv_var * stats_.b)
    cf = _cholesky(prec, "K_ZZ + K_ZX K_XZ / sigma^2")
    sigma = _sym(linalg.cho_solve(cf, np.eye(km.d)))
    ks = k @ sigma
    m = inv_var * (k @ (sigma @ stats_.a))
    s = _sym(ks @ k)
    _check_pd(s, "posterior covariance")
    return VariationalPosterior(m, s, sigma)


def regularization_lambda(scales: NoiseScales, noise: NoiseModel, d: int, rho_pd: float = 0.01) -> float:
    """Diagonal shift keeping the noisy precision positive definite with probability ``1 - rho_pd``."""
    if d < 1:
        raise ValueError("need at least one inducing point")
    if not 0 < rho_pd < 1:
        raise ValueError("rho_pd must lie in (0, 1)")
    return scales.sigma_b / noise.variance * math.sqrt(d * math.log(2 * d**2 / rho_pd)) * (d + 1) / (2 * d)


def dp_posterior(
    km: KernelMatrices,
    private_stats: MomentStatistics,
    scales: NoiseScales,
    noise: NoiseModel,
    rho_pd: float = 0.01,
    naive: bool = False,
    symmetric_noise_terms: bool = True,
) -> VariationalPosterior:
    """Posterior from privatised moments with regularisation and noise-aware covariance.

    Args:
        km: Kernel matrices; only ``k_zz`` is used, the data enter through
            ``private_stats``.
        private_stats: Privatised ``(a + E_a, b + E_b)``.
        scales: Noise scales the statistics were released with.
        noise: Observation noise model.
        rho_pd: Failure probability used to set the diagonal shift.
        naive: Omit the noise-induced covariance terms ``s21`` and ``s22``.
        symmetric_noise_terms: Linearise the mean with respect to the
            symmetric ``E_b`` actually added, which couples each off-diagonal
            noise draw to both ``(i, j)`` and ``(j, i)``. With False the
            off-diagonal entries are treated as independent, which drops the
            ``w w^T`` cross terms.

    Raises:
        NotPositiveDefiniteError: if the regularised precision or the final
            covariance is not positive definite. The shift is fixed before
            seeing the data and is never inflated here.
    """
    k = km.k_zz
    d = km.d
    inv_var = 1.0 / noise.variance
    lam = regularization_lambda(scales, noise, d, rho_pd)
    prec = _sym(k + inv_var * private_stats.b + lam * np.eye(d))
    cf = _cholesky(prec, "regularised precision")
    sigma_tilde = _sym(linalg.cho_solve(cf, np.eye(d)))
    ks = k @ sigma_tilde
    w = sigma_tilde @ private_stats.a
    m = inv_var * (k @ w)
    s_base = _sym(ks @ k)
    s21 = _sym(scales.sigma_a**2 * inv_var**2 * (ks @ ks.T))
    if symmetric_noise_terms:
        inner = w @ w * np.eye(d) + np.outer(w, w)
    else:
        inner = w @ w * np.eye(d) + np.diag(w**2)
    s22 = _sym(0.5 * scales.sigma_b**2 * inv_var**4 * (ks @ inner @ ks.T))
    s = s_base if naive else _sym(s_base + s21 + s22)
    _check_pd(s, "posterior covariance")
    return VariationalPosterior(m, s, sigma_tilde, lam, s21, s22, scales)


@dataclass(frozen=True)
class MechanismSetup:
    """Public quantities fixed before the data are touched."""

    bounds: SensitivityBounds
    sensitivity: float
    scales: NoiseScales


def calibrate_mechanism(
    spec: KernelSpec,
    inducing: InducingSet,
    r_y: float,
    budget: PrivacyBudget,
    c: float = 1.0,
    method="auto",
) -> MechanismSetup:
    bounds = kernel_norm_bound(spec, inducing, r_y, method)
    delta = joint_sensitivity(bounds, c)
    sigma_a = calibrate_analytic_gaussian(budget, delta)
    return MechanismSetup(bounds, delta, NoiseScales.from_ratio(sigma_a, c))


def clip_outputs(y, r_y: float) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    out = np.clip(y, -r_y, r_y)
    n_clipped = int(np.count_nonzero(out != y))
    if n_clipped:
        logger.warning("clipped %d of %d outputs to [-%g, %g]", n_clipped, len(y), r_y, r_y)
    return out


def dp_gp_inference(
    x,
    y,
    inducing: InducingSet,
    spec: KernelSpec,
    noise: NoiseModel,
    c: float,
    r_y: float,
    budget: PrivacyBudget,
    rng: np.random.Generator,
    *,
    method="auto",
    rho_pd: float = 0.01,
    naive: bool = False,
    prior_mean: float = 0.0,
    setup: Optional[MechanismSetup] = None,
) -> VariationalPosterior:
    """``(epsilon, delta)``-DP variational posterior for known hyperparameters.

    Outputs are centred by ``prior_mean`` and clipped to ``[-r_y, r_y]``. The
    data enter only through the moment statistics, which are released once
    through the Gaussian mechanism; everything after is post-processing.
    A precomputed ``setup`` for the same public inputs skips recalibration.
    """
    if setup is None:
        setup = calibrate_mechanism(spec, inducing, r_y, budget, c, method)
    y = clip_outputs(np.asarray(y, dtype=float).reshape(-1) - prior_mean, r_y)
    km = gram_matrices(spec, inducing, x)
    released = privatize_moments(compute_moments(km, y), setup.scales, rng)
    post = dp_posterior(km, released, setup.scales, noise, rho_pd, naive=naive)
    if prior_mean:
        post = replace(post, mean_offset=prior_mean)
    return post
