"""Predictive distributions from ``q(u)`` and clipped validation log-likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from dpgp.inference import NoiseModel, VariationalPosterior
from dpgp.kernels import (
    InducingSet,
    KernelSpec,
    as_inputs,
    cross_to_inducing,
    gram_matrices,
    jitter_amount,
    kernel_matrix,
)

NEGATIVE_VARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: np.ndarray
    cov: np.ndarray
    diag_only: bool

    @property
    def var(self) -> np.ndarray:
        return self.cov if self.diag_only else np.diag(self.cov)


def _floor_variances(var: np.ndarray) -> np.ndarray:
    if np.any(var < -NEGATIVE_VARIANCE_TOL):
        raise np.linalg.LinAlgError(f"predictive variance {var.min():.3g} is negative")
    return np.maximum(var, 0.0)


def predict(
    post: VariationalPosterior,
    spec: KernelSpec,
    inducing: InducingSet,
    v,
    diag_only: bool = True,
) -> PredictiveDistribution:
    """Predictive distribution of the latent function at the rows of ``v``.

    ``mean = K_VZ K_ZZ^-1 m`` and
    ``cov = K_VV - K_VZ K_ZZ^-1 (K_ZZ - S) K_ZZ^-1 K_ZV``. With ``diag_only``
    only the marginal variances are formed and ``cov`` holds that vector.
    """
    v = as_inputs(v)
    k_zz = gram_matrices(spec, inducing, np.empty((0, inducing.dim))).k_zz
    k_vz = cross_to_inducing(spec, inducing, v)
    cf = linalg.cho_factor(k_zz, lower=True)
    proj = linalg.cho_solve(cf, k_vz.T)  # K_ZZ^-1 K_ZV
    mean = proj.T @ post.m + post.mean_offset
    reduction = k_zz - post.s
    if diag_only:
        kvv = np.full(len(v), spec.variance)
        same = np.all(v[:, None, :] == inducing.points[None, :, :], axis=-1).any(axis=1)
        kvv = kvv + jitter_amount(spec) * same
        var = kvv - np.einsum("zi,zw,wi->i", proj, reduction, proj)
        return PredictiveDistribution(mean, _floor_variances(var), True)
    kvv = kernel_matrix(spec, v)
    same = np.all(v[:, None, :] == v[None, :, :], axis=-1)
    on_z = np.all(v[:, None, :] == inducing.points[None, :, :], axis=-1).any(axis=1)
    kvv = kvv + jitter_amount(spec) * (same & on_z[:, None] & on_z[None, :])
    cov = kvv - proj.T @ reduction @ proj
    cov = 0.5 * (cov + cov.T)
    cov[np.diag_indices_from(cov)] = _floor_variances(np.diag(cov))
    return PredictiveDistribution(mean, cov, False)


def validation_loglik_terms(pred: PredictiveDistribution, y_v, noise: NoiseModel) -> np.ndarray:
    """Per-point ``log N(y_i; mean_i, var_i + sigma^2)``; off-diagonal covariance is ignored."""
    y_v = np.asarray(y_v, dtype=float).reshape(-1)
    total_var = pred.var + noise.variance
    if np.any(total_var <= 0):
        raise ValueError("predictive variance plus noise must be positive")
    resid = y_v - pred.mean
    return -0.5 * np.log(2 * np.pi * total_var) - 0.5 * resid**2 / total_var


def loglik_bounds(r_y: float, noise: NoiseModel):
    """Centre and radius of the clipping interval for per-point log-likelihoods.

    The upper end is the density peak with zero predictive variance; the
    lower end is the value for a prediction off by ``2 r_y``.
    """
    radius = r_y**2 / noise.variance
    center = -0.5 * math.log(2 * math.pi) - math.log(noise.obs_noise_sd) - radius
    return center, radius


def clip_loglik(terms, r_y: float, noise: NoiseModel):
    center, radius = loglik_bounds(r_y, noise)
    clipped = np.clip(np.asarray(terms, dtype=float), center - radius, center + radius)
    return clipped, center, radius
