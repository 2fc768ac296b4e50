"""Gaussian-mechanism calibration, moment privatisation and private mean estimation."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from dpgp.kernels import KernelMatrices


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class NoiseScales:
    sigma_a: float
    sigma_b: float

    @classmethod
    def from_ratio(cls, sigma_a: float, c: float) -> "NoiseScales":
        if not c > 0:
            raise ValueError(f"noise ratio c must be positive, got {c}")
        return cls(sigma_a, sigma_a / c)

    @property
    def c(self) -> float:
        return self.sigma_a / self.sigma_b if self.sigma_b > 0 else 1.0


ZERO_NOISE = NoiseScales(0.0, 0.0)


def flatten_symmetric(b: np.ndarray) -> np.ndarray:
    """``[b_11 .. b_dd, sqrt2 b_12 .. sqrt2 b_(d-1)d]``: the diagonal, then the scaled upper triangle."""
    iu = np.triu_indices(b.shape[0], 1)
    return np.concatenate([np.diag(b), math.sqrt(2) * b[iu]])


def unflatten_symmetric(v: np.ndarray, d: int) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if len(v) != d * (d + 1) // 2:
        raise ValueError(f"expected {d * (d + 1) // 2} elements for d={d}, got {len(v)}")
    out = np.diag(v[:d])
    iu = np.triu_indices(d, 1)
    off = v[d:] / math.sqrt(2)
    out[iu] = off
    out[iu[::-1]] = off
    return out


@dataclass(frozen=True)
class MomentStatistics:
    """The data-dependent sums ``a = K_ZX y`` and ``b = K_ZX K_XZ``."""

    a: np.ndarray
    b: np.ndarray

    @property
    def d(self) -> int:
        return len(self.a)

    @property
    def b_flat(self) -> np.ndarray:
        return flatten_symmetric(self.b)


def compute_moments(km: KernelMatrices, y) -> MomentStatistics:
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) != km.k_zx.shape[1]:
        raise ValueError(f"{len(y)} outputs for {km.k_zx.shape[1]} inputs")
    b = km.k_zx @ km.k_zx.T
    return MomentStatistics(km.k_zx @ y, 0.5 * (b + b.T))


def privatize_moments(
    stats_: MomentStatistics, scales: NoiseScales, rng: np.random.Generator
) -> MomentStatistics:
    """Release ``a`` and the flattened ``b`` through the joint Gaussian mechanism.

    Noise on the flattened vector has standard deviation ``sigma_b``; after
    unflattening, off-diagonal entries of ``b`` carry variance ``sigma_b**2 / 2``.
    The ``a`` noise is drawn first, then the ``b`` noise.
    """
    d = stats_.d
    e_a = scales.sigma_a * rng.standard_normal(d)
    e_b = scales.sigma_b * rng.standard_normal(d * (d + 1) // 2)
    return MomentStatistics(stats_.a + e_a, stats_.b + unflatten_symmetric(e_b, d))


def _privacy_profile(sigma: float, epsilon: float, sensitivity: float) -> float:
    """``delta(sigma)`` of the Gaussian mechanism; decreasing in sigma."""
    u = sensitivity / (2 * sigma)
    v = epsilon * sigma / sensitivity
    return special.ndtr(u - v) - math.exp(epsilon + special.log_ndtr(-u - v))


class CalibrationError(RuntimeError):
    pass


def calibrate_analytic_gaussian(
    budget: PrivacyBudget, sensitivity: float, rtol: float = 1e-12, max_steps: int = 200
) -> float:
    """Smallest noise scale giving ``(epsilon, delta)``-DP for an L2 ``sensitivity``.

    Bisects the exact Gaussian privacy profile on a log scale. The returned
    value is always the upper end of the final bracket, so it satisfies the
    privacy condition.
    """
    if not sensitivity > 0:
        raise ValueError(f"sensitivity must be positive, got {sensitivity}")
    eps, delta = budget.epsilon, budget.delta

    def ok(s):
        return _privacy_profile(s, eps, sensitivity) <= delta

    lo, hi = 1e-10 * sensitivity, 1e6 * sensitivity
    steps = 0
    while ok(lo):
        lo /= 10
        steps += 1
    while not ok(hi):
        hi *= 10
        steps += 1
    while hi / lo - 1 > rtol:
        if steps >= max_steps:
            raise CalibrationError(f"bisection did not converge in {max_steps} steps")
        mid = math.sqrt(lo * hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
        steps += 1
    return hi


def classical_gaussian_sigma(budget: PrivacyBudget, sensitivity: float) -> float:
    return math.sqrt(2 * math.log(1.25 / budget.delta)) / budget.epsilon * sensitivity


def zcdp_from_approx_dp(budget: PrivacyBudget) -> float:
    """zCDP parameter ``rho`` whose conversion back to ``(epsilon, delta)`` is exact."""
    log_inv = math.log(1 / budget.delta)
    return (math.sqrt(budget.epsilon + log_inv) - math.sqrt(log_inv)) ** 2


def approx_dp_epsilon_from_zcdp(rho: float, delta: float) -> float:
    return rho + 2 * math.sqrt(rho * math.log(1 / delta))


@dataclass(frozen=True)
class CoinPressConfig:
    """Settings for :func:`coinpress_mean`.

    ``spread`` is the assumed scale of the values around their mean; it sets
    how far beyond the current mean interval values are allowed before being
    clipped. ``confidence`` is the failure probability used by each shrink
    step.
    """

    rho: float
    center: float
    radius: float
    iterations: int = 12
    last_iteration_fraction: float = 0.75
    spread: float = 1.0
    confidence: float = 0.01

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.iterations < 2:
            raise ValueError("need at least two iterations")
        if not 0 < self.last_iteration_fraction < 1:
            raise ValueError("last_iteration_fraction must lie in (0, 1)")

    def rho_schedule(self) -> np.ndarray:
        head = self.rho * (1 - self.last_iteration_fraction) / (self.iterations - 1)
        sched = np.full(self.iterations, head)
        # the last step takes the remainder so the schedule sums to rho exactly
        sched[-1] = self.rho - head * (self.iterations - 1)
        return sched


def coinpress_mean(values, cfg: CoinPressConfig, rng: np.random.Generator) -> float:
    """``rho``-zCDP estimate of the mean of values lying in ``center +- radius``.

    Each of the first ``iterations - 1`` rounds releases a noisy clipped mean
    and shrinks the interval believed to contain the true mean; the final
    round releases the clipped mean with the bulk of the budget. Intermediate
    centres are kept inside the original interval; the final estimate is not.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    n = len(x)
    if n == 0:
        raise ValueError("cannot estimate the mean of an empty sample")
    lo, hi = cfg.center - cfg.radius, cfg.center + cfg.radius
    tail = cfg.spread * math.sqrt(2 * math.log(2 * n / cfg.confidence))
    z = stats.norm.isf(cfg.confidence / 2)
    c, r = cfg.center, cfg.radius
    schedule = cfg.rho_schedule()
    for step, rho_t in enumerate(schedule):
        width = min(r + tail, cfg.radius)
        clipped = np.clip(x, c - width, c + width)
        noise_sd = 2 * width / (n * math.sqrt(2 * rho_t))
        estimate = clipped.mean() + noise_sd * rng.standard_normal()
        if step == len(schedule) - 1:
            return float(estimate)
        r = min(r, z * math.sqrt(cfg.spread**2 / n + noise_sd**2))
        c = min(max(estimate, lo), hi)
    raise AssertionError("unreachable")
